"""
Whittle indices of the subsidy problem.

Subsidy mu only shifts the passive reward, so every probe of one ADR reuses
the same continuation table and passive transition matrix.
"""
import bisect
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import settings
from core.exceptions import NonMonotoneThresholdError, SubsidyBoundError
from core.logging import whittle_logger
from models.models import AdrModel, ContinuationTable, SolveMethod, WhittleTable
from services.solver_service import solve_value, transition_matrix


def default_epsilon(model: AdrModel) -> float:
    return settings.whittle_epsilon_relative * (model.lam if model.lam > 0 else 1.0)


class ThresholdProbeCache:
    """
    Memoized threshold_index(mu) for one ADR.

    Probes are kept sorted by mu. A new probe whose threshold breaks the
    non-increasing order against its neighbours by at most
    settings.isotonic_clip_cells is clipped onto the neighbour (and logged);
    larger breaks raise NonMonotoneThresholdError.
    """

    def __init__(self, model: AdrModel, cont: ContinuationTable, method: SolveMethod = SolveMethod.vi):
        self.model = model
        self.cont = cont
        self.method = SolveMethod(method)
        self.passive = transition_matrix(cont)
        self._mus: List[float] = []
        self._thresholds: List[int] = []
        self._values: Dict[float, np.ndarray] = {}
        self.clipped = 0

    def __len__(self) -> int:
        return len(self._mus)

    @property
    def probes(self) -> List[Tuple[float, int]]:
        return list(zip(self._mus, self._thresholds))

    def _warm_start(self, pos: int) -> Optional[np.ndarray]:
        if not self._mus:
            return None
        neighbour = self._mus[pos - 1] if pos > 0 else self._mus[pos]
        return self._values[neighbour]

    def threshold_at(self, mu: float) -> int:
        mu = float(mu)
        pos = bisect.bisect_left(self._mus, mu)
        if pos < len(self._mus) and self._mus[pos] == mu:
            return self._thresholds[pos]

        vt = solve_value(
            self.model, self.cont, subsidy=mu, method=self.method,
            initial=self._warm_start(pos), passive=self.passive,
        )
        k = vt.threshold_index

        if pos > 0 and k > self._thresholds[pos - 1]:
            k = self._clip(k, (self._mus[pos - 1], self._thresholds[pos - 1]), (mu, k))
        if pos < len(self._mus) and k < self._thresholds[pos]:
            k = self._clip(k, (mu, k), (self._mus[pos], self._thresholds[pos]))

        self._mus.insert(pos, mu)
        self._thresholds.insert(pos, k)
        self._values[mu] = vt.v
        return k

    def _clip(self, k: int, low_probe: Tuple[float, int], high_probe: Tuple[float, int]) -> int:
        gap = high_probe[1] - low_probe[1]
        if gap > settings.isotonic_clip_cells:
            raise NonMonotoneThresholdError(low_probe, high_probe)
        self.clipped += 1
        target = low_probe[1] if k == high_probe[1] else high_probe[1]
        whittle_logger.warning(
            "Isotonic clip of threshold probe",
            mu_low=low_probe[0], k_low=low_probe[1], mu_high=high_probe[0], k_high=high_probe[1], clipped_to=target,
        )
        return target


def threshold_at(
    model: AdrModel, cont: ContinuationTable, subsidy: float, cache: Optional[ThresholdProbeCache] = None
) -> int:
    cache = cache or ThresholdProbeCache(model, cont)
    return cache.threshold_at(subsidy)


def threshold_profile(
    model: AdrModel, cont: ContinuationTable, subsidies: Sequence[float],
    cache: Optional[ThresholdProbeCache] = None,
) -> np.ndarray:
    """threshold_index at each subsidy, probed in increasing order."""
    cache = cache or ThresholdProbeCache(model, cont)
    order = np.argsort(subsidies)
    out = np.empty(len(subsidies), dtype=np.int64)
    for i in order:
        out[i] = cache.threshold_at(subsidies[i])
    return out


def find_mu_bar(
    model: AdrModel, cont: ContinuationTable, cache: Optional[ThresholdProbeCache] = None
) -> float:
    """
    Smallest mu0 * 2^i with passive optimal everywhere, mu0 = lambda.

    Raises:
        SubsidyBoundError: no such mu up to mu0 * 2^doubling_cap_exponent.
    """
    cache = cache or ThresholdProbeCache(model, cont)
    mu0 = model.lam if model.lam > 0 else 1.0
    mu = mu0
    for _ in range(settings.doubling_cap_exponent + 1):
        if cache.threshold_at(mu) < 0:
            whittle_logger.debug("Subsidy upper bound found", mu_bar=mu, probes=len(cache))
            return mu
        mu *= 2.0
    raise SubsidyBoundError(mu0 * 2.0 ** settings.doubling_cap_exponent)


def whittle_index(
    model: AdrModel,
    cont: ContinuationTable,
    k: int,
    mu_bar: Optional[float] = None,
    epsilon: Optional[float] = None,
    cache: Optional[ThresholdProbeCache] = None,
) -> float:
    """
    Smallest subsidy (to within epsilon) making passive optimal at grid point k.

    Returns the upper end of the final bisection bracket, and 0 when passive
    is already optimal without subsidy.
    """
    cache = cache or ThresholdProbeCache(model, cont)
    epsilon = default_epsilon(model) if epsilon is None else epsilon
    if cache.threshold_at(0.0) < k:
        return 0.0
    hi = find_mu_bar(model, cont, cache) if mu_bar is None else mu_bar
    lo = 0.0
    while hi - lo > epsilon:
        mid = 0.5 * (lo + hi)
        if cache.threshold_at(mid) < k:
            hi = mid
        else:
            lo = mid
    return hi


def build_whittle_table(
    model: AdrModel,
    cont: ContinuationTable,
    epsilon: Optional[float] = None,
    mu_bar: Optional[float] = None,
    cache: Optional[ThresholdProbeCache] = None,
) -> WhittleTable:
    """
    Indices for every grid point by bisecting subsidy intervals shared across k.

    Each probe splits the pending grid points into those already passive
    (index in the lower half) and those still repairing (upper half), so the
    probe count grows with the number of distinct thresholds, not with n.
    """
    cache = cache or ThresholdProbeCache(model, cont)
    epsilon = default_epsilon(model) if epsilon is None else epsilon
    mu_bar = find_mu_bar(model, cont, cache) if mu_bar is None else mu_bar

    index = np.zeros(cont.n + 1)
    base = cache.threshold_at(0.0)
    pending = [(np.arange(0, base + 1), 0.0, mu_bar)]
    while pending:
        ks, lo, hi = pending.pop()
        if ks.size == 0:
            continue
        if hi - lo <= epsilon:
            index[ks] = hi
            continue
        mid = 0.5 * (lo + hi)
        t_mid = cache.threshold_at(mid)
        pending.append((ks[ks > t_mid], lo, mid))
        pending.append((ks[ks <= t_mid], mid, hi))

    index = np.minimum.accumulate(index)
    whittle_logger.info(
        "Whittle table built", n=cont.n, mu_bar=mu_bar, epsilon=epsilon, probes=len(cache), clipped=cache.clipped
    )
    return WhittleTable(index_values=index, mu_bar=mu_bar, epsilon=epsilon)


def sweep_whittle_table(
    model: AdrModel,
    cont: ContinuationTable,
    epsilon: Optional[float] = None,
    mu_bar: Optional[float] = None,
    cache: Optional[ThresholdProbeCache] = None,
) -> WhittleTable:
    """Indices from thresholds on the subsidy grid {0, eps, 2 eps, ..., mu_bar}."""
    cache = cache or ThresholdProbeCache(model, cont)
    epsilon = default_epsilon(model) if epsilon is None else epsilon
    mu_bar = find_mu_bar(model, cont, cache) if mu_bar is None else mu_bar

    steps = int(np.ceil(mu_bar / epsilon))
    mus = np.arange(steps + 1) * epsilon
    thresholds = np.array([cache.threshold_at(mu) for mu in mus])
    # first probe with threshold < k; thresholds are non-increasing
    first = np.searchsorted(-thresholds, -np.arange(cont.n + 1), side="right")
    first = np.minimum(first, steps)
    return WhittleTable(index_values=mus[first], mu_bar=mu_bar, epsilon=epsilon)


def _chain_passive_optimal(
    passive_reward: np.ndarray,
    active_reward: np.ndarray,
    passive_kernel: np.ndarray,
    active_kernel: np.ndarray,
    beta: float,
    subsidy: float,
) -> np.ndarray:
    v = np.zeros(len(passive_reward))
    for _ in range(settings.vi_max_iterations):
        idle = passive_reward + subsidy + beta * passive_kernel @ v
        repair = active_reward + beta * active_kernel @ v
        new_v = np.maximum(idle, repair)
        done = np.max(np.abs(new_v - v)) < settings.vi_tolerance * (1.0 + np.max(np.abs(new_v)))
        v = new_v
        if done:
            break
    idle = passive_reward + subsidy + beta * passive_kernel @ v
    repair = active_reward + beta * active_kernel @ v
    # weak optimality: a tie at zero subsidy gives index 0
    return idle >= repair - settings.tie_tolerance * (1.0 + np.max(np.abs(v)))


def chain_index(
    passive_reward: Sequence[float],
    active_reward: Sequence[float],
    passive_kernel: np.ndarray,
    active_kernel: np.ndarray,
    beta: float,
    epsilon: float,
) -> np.ndarray:
    """Whittle indices of every state of a small fully observed two-action chain."""
    args = (
        np.asarray(passive_reward, dtype=float),
        np.asarray(active_reward, dtype=float),
        np.asarray(passive_kernel, dtype=float),
        np.asarray(active_kernel, dtype=float),
        beta,
    )
    states = len(args[0])
    indices = np.zeros(states)

    hi = 1.0
    for _ in range(settings.doubling_cap_exponent + 1):
        if np.all(_chain_passive_optimal(*args, hi)):
            break
        hi *= 2.0
    else:
        raise SubsidyBoundError(hi)

    base = _chain_passive_optimal(*args, 0.0)
    for s in range(states):
        if base[s]:
            continue
        lo, top = 0.0, hi
        while top - lo > epsilon:
            mid = 0.5 * (lo + top)
            if _chain_passive_optimal(*args, mid)[s]:
                top = mid
            else:
                lo = mid
        indices[s] = top
    return indices


def full_info_index(model: AdrModel, epsilon: Optional[float] = None) -> Tuple[float, float]:
    """(index of Broken, index of Working) when the state is observed exactly."""
    epsilon = default_epsilon(model) if epsilon is None else epsilon
    p = model.p
    idle_kernel = np.array([[1.0, 0.0], [p, 1.0 - p]])
    repair_kernel = np.array([[p, 1.0 - p], [p, 1.0 - p]])
    idle_reward = np.array([0.0, model.lam]) - model.theta
    repair_reward = np.full(2, model.lam - model.c - model.theta)
    broken, working = chain_index(idle_reward, repair_reward, idle_kernel, repair_kernel, model.beta, epsilon)
    return float(broken), float(working)


def slow_info_index(model: AdrModel, epsilon: Optional[float] = None) -> Tuple[float, float, float]:
    """
    Indices at beliefs (0, 1-p, 1) when the true state is revealed after each event.

    An ADR last seen broken stays at 0, one last seen working moves to 1-p,
    and a repaired one works this event and is at 1-p the next.
    """
    epsilon = default_epsilon(model) if epsilon is None else epsilon
    p = model.p
    idle_kernel = np.array(
        [
            [1.0, 0.0, 0.0],
            [p, 1.0 - p, 0.0],
            [0.0, 1.0, 0.0],
        ]
    )
    repair_kernel = np.tile([0.0, 1.0, 0.0], (3, 1))
    idle_reward = model.lam * np.array([0.0, 1.0 - p, 1.0]) - model.theta
    repair_reward = np.full(3, model.lam - model.c - model.theta)
    zero, middle, one = chain_index(idle_reward, repair_reward, idle_kernel, repair_kernel, model.beta, epsilon)
    return float(zero), float(middle), float(one)
