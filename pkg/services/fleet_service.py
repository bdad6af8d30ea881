"""
Fleet scheduling policies and the discounted-reward simulator.

All compared policies of one run see the same failure draws, meter noise and
shed draws, so reported differences reflect decisions only.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binom

from core.config import settings
from core.exceptions import MissingWhittleTableError, ModelValidationError, SeedConflictError
from core.logging import fleet_logger
from models.models import (
    AdrModel,
    BeliefGrid,
    CostMode,
    FleetAdr,
    FleetScenario,
    ObsScenario,
    PolicyId,
    PolicyStats,
    SimReport,
)
from services.observation_service import likelihood_batch
from services.pomdp_service import belief_update_batch
from services.solver_service import ContinuationCache, continuation_for
from services.whittle_service import ThresholdProbeCache, build_whittle_table, full_info_index, slow_info_index

# slow-information belief categories
SLOW_BROKEN, SLOW_AFTER_EVENT, SLOW_FRESH = 0, 1, 2


# --- Single-ADR periodic review ---
def periodic_value(model: AdrModel, q: int) -> float:
    """Value of repairing every q events, starting with a repair."""
    if q < 1:
        raise ModelValidationError("review interval q must be at least 1")
    bq = model.beta ** q
    decay = model.beta * (1.0 - model.p)
    earned = model.lam * (1.0 - bq * (1.0 - model.p) ** q) / (1.0 - decay)
    return (earned - model.c - model.theta * (1.0 - bq) / (1.0 - model.beta)) / (1.0 - bq)


def best_periodic_interval(model: AdrModel, q_max: int = 200) -> Tuple[int, float]:
    """(q*, U(q*)) over q = 1..q_max; the smallest q wins ties."""
    if q_max < 1:
        raise ModelValidationError("q_max must be at least 1")
    values = [periodic_value(model, q) for q in range(1, q_max + 1)]
    best = int(np.argmax(values))
    return best + 1, values[best]


def pomdp_improvement(value_at_zero: float, periodic_best: float) -> float:
    """Relative gain (percent) of belief-based maintenance over the best periodic schedule."""
    return 100.0 * (value_at_zero - periodic_best) / periodic_best


def horizon_tail_bound(beta: float, horizon: int, value_scale: float = 1.0) -> float:
    """
    Largest discounted reward lost by truncating at the horizon.

    value_scale is the largest state value; for a fleet that is the value of
    the all-working state, so the relative loss never exceeds beta^T.
    """
    return beta ** horizon * value_scale


def horizon_for_tolerance(beta: float, tolerance: float) -> int:
    """Shortest horizon T with beta^T <= tolerance."""
    if not 0.0 < tolerance < 1.0:
        raise ModelValidationError(f"tolerance must lie in (0, 1), got {tolerance}")
    return math.ceil(math.log(tolerance) / math.log(beta))


# --- Count-chain optimal policies (identical costs) ---
@dataclass(frozen=True)
class FullInfoOptimalPolicy:
    """Repair count per working-count state w = 0..D."""

    repairs: np.ndarray
    values: np.ndarray


def _binomial_rows(size: int, prob: float) -> np.ndarray:
    """B[j, x] = P(Binomial(j, prob) = x) for j, x in 0..size."""
    j = np.arange(size + 1)[:, None]
    x = np.arange(size + 1)[None, :]
    return binom.pmf(x, j, prob)


def _pick_max(values: np.ndarray, tol: float) -> int:
    """Last index within tol of the maximum; for count-indexed actions ties go to more repairs."""
    return int(np.flatnonzero(values >= values.max() - tol)[-1])


def full_info_optimal_policy(model: AdrModel, adr_count: int, crews: int) -> FullInfoOptimalPolicy:
    """Value iteration on the working-count chain of D identical, fully observed ADRs."""
    survive = _binomial_rows(adr_count, 1.0 - model.p)
    w = np.arange(adr_count + 1)
    v = np.zeros(adr_count + 1)

    def action_values(v: np.ndarray) -> np.ndarray:
        q = np.full((adr_count + 1, crews + 1), -np.inf)
        expected = survive @ v
        for a in range(crews + 1):
            ok = w + a <= adr_count
            q[ok, a] = (
                model.lam * w[ok] + (model.lam - model.c) * a - model.theta * adr_count
                + model.beta * expected[w[ok] + a]
            )
        return q

    for _ in range(settings.vi_max_iterations):
        new_v = action_values(v).max(axis=1)
        done = np.max(np.abs(new_v - v)) < settings.vi_tolerance * (1.0 + np.max(np.abs(new_v)))
        v = new_v
        if done:
            break

    q = action_values(v)
    slack = settings.tie_tolerance * (1.0 + np.max(np.abs(v)))
    repairs = np.array([_pick_max(q[s], slack) for s in range(adr_count + 1)])
    return FullInfoOptimalPolicy(repairs=repairs, values=v)


@dataclass
class SlowInfoOptimalPolicy:
    """
    Count DP for identical ADRs whose state is revealed after each event.

    Values live on states with no fresh (belief 1) ADR, indexed by the number
    at belief 0; the remaining ADRs are at belief 1-p. States with fresh ADRs
    only occur before the first reveal and are handled by one backup.
    """

    model: AdrModel
    adr_count: int
    crews: int
    values: np.ndarray = field(default=None, repr=False)
    _fail: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._fail = _binomial_rows(self.adr_count, self.model.p)
        self.values = self._solve()

    def _expected_next(self, v: np.ndarray) -> np.ndarray:
        """E[base, j] = E v[base + Binomial(j, p)], for base + j <= D."""
        size = self.adr_count + 1
        out = np.full((size, size), np.nan)
        for j in range(size):
            windows = np.lib.stride_tricks.sliding_window_view(v, j + 1)
            out[: size - j, j] = windows @ self._fail[j, : j + 1]
        return out

    def _actions(self, n0: int, n1: int, n2: int) -> np.ndarray:
        options = [
            (a0, a1, a2)
            for a0 in range(min(n0, self.crews) + 1)
            for a1 in range(min(n1, self.crews - a0) + 1)
            for a2 in range(min(n2, self.crews - a0 - a1) + 1)
        ]
        return np.array(options, dtype=np.int64)

    def _backup(self, n0: int, n1: int, n2: int, expected: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        acts = self._actions(n0, n1, n2)
        a0, a1, a2 = acts[:, 0], acts[:, 1], acts[:, 2]
        m = self.model
        reward = (
            m.lam * (1.0 - m.p) * (n1 - a1) + m.lam * (n2 - a2)
            + (m.lam - m.c) * (a0 + a1 + a2) - m.theta * self.adr_count
        )
        # revealed-broken stay at 0; every other ADR ends at 1-p unless it fails
        q = reward + m.beta * expected[n0 - a0, n1 - a1]
        return acts, q

    def _solve(self) -> np.ndarray:
        size = self.adr_count + 1
        v = np.zeros(size)
        for _ in range(settings.vi_max_iterations):
            expected = self._expected_next(v)
            new_v = np.array([self._backup(n0, self.adr_count - n0, 0, expected)[1].max() for n0 in range(size)])
            done = np.max(np.abs(new_v - v)) < settings.vi_tolerance * (1.0 + np.max(np.abs(new_v)))
            v = new_v
            if done:
                break
        self._expected = self._expected_next(v)
        return v

    def action(self, n0: int, n1: int, n2: int = 0) -> Tuple[int, int, int]:
        """Repairs (from belief 0, from belief 1-p, from belief 1)."""
        acts, q = self._backup(n0, n1, n2, self._expected)
        slack = settings.tie_tolerance * (1.0 + np.max(np.abs(self.values)))
        best = acts[_pick_max(q, slack)]
        return int(best[0]), int(best[1]), int(best[2])


# --- Run state and policies ---
@dataclass
class FleetState:
    """What the policies may look at during one event."""

    event: int  # 1-based
    working: np.ndarray  # true states during this event
    belief: np.ndarray  # partial-information beliefs
    slow: np.ndarray  # slow-information categories


def select_top(indices: np.ndarray, crews: int) -> np.ndarray:
    """At most M ids with the largest strictly positive index; ties go to the lower id."""
    ids = np.flatnonzero(indices > 0)
    if ids.size == 0:
        return ids
    order = np.lexsort((ids, -indices[ids]))
    return np.sort(ids[order[:crews]])


class FleetPolicy:
    policy_id: PolicyId
    needs_beliefs = False

    def __init__(self, fs: FleetScenario):
        self.fs = fs

    def select(self, state: FleetState) -> np.ndarray:
        raise NotImplementedError


class FullOptimal(FleetPolicy):
    policy_id = PolicyId.full_optimal

    def __init__(self, fs: FleetScenario, solved: FullInfoOptimalPolicy):
        super().__init__(fs)
        self.solved = solved

    def select(self, state: FleetState) -> np.ndarray:
        count = self.solved.repairs[int(state.working.sum())]
        return np.flatnonzero(~state.working)[:count]


class FullWhittle(FleetPolicy):
    policy_id = PolicyId.full_whittle

    def __init__(self, fs: FleetScenario):
        super().__init__(fs)
        self.table = np.array([adr.full_info_index for adr in fs.adrs])

    def select(self, state: FleetState) -> np.ndarray:
        indices = self.table[np.arange(self.fs.size), state.working.astype(np.int64)]
        return select_top(indices, self.fs.crews)


class SlowOptimal(FleetPolicy):
    policy_id = PolicyId.slow_optimal

    def __init__(self, fs: FleetScenario, solved: SlowInfoOptimalPolicy):
        super().__init__(fs)
        self.solved = solved

    def select(self, state: FleetState) -> np.ndarray:
        groups = [np.flatnonzero(state.slow == category) for category in (SLOW_BROKEN, SLOW_AFTER_EVENT, SLOW_FRESH)]
        counts = self.solved.action(*(len(g) for g in groups))
        return np.sort(np.concatenate([g[:a] for g, a in zip(groups, counts)]))


class SlowWhittle(FleetPolicy):
    policy_id = PolicyId.slow_whittle

    def __init__(self, fs: FleetScenario):
        super().__init__(fs)
        self.table = np.array([adr.slow_info_index for adr in fs.adrs])

    def select(self, state: FleetState) -> np.ndarray:
        indices = self.table[np.arange(self.fs.size), state.slow]
        return select_top(indices, self.fs.crews)


class PartialWhittle(FleetPolicy):
    policy_id = PolicyId.partial_whittle
    needs_beliefs = True

    def __init__(self, fs: FleetScenario):
        super().__init__(fs)
        for adr in fs.adrs:
            if adr.whittle is None:
                raise MissingWhittleTableError(adr.adr_id)
        sizes = {adr.whittle.n for adr in fs.adrs}
        if len(sizes) != 1:
            raise ModelValidationError(f"Whittle tables of one fleet must share the grid size, got {sorted(sizes)}")
        self.grid = BeliefGrid(n=sizes.pop())
        self.table = np.stack([adr.whittle.index_values for adr in fs.adrs])  # (D, n+1)

    def select(self, state: FleetState) -> np.ndarray:
        indices = self.table[np.arange(self.fs.size), self.grid.round_up(state.belief)]
        return select_top(indices, self.fs.crews)


class Periodic(FleetPolicy):
    """Every ADR repaired each q* events, staggered by id, at most M per event."""

    policy_id = PolicyId.periodic

    def __init__(self, fs: FleetScenario):
        super().__init__(fs)
        self.intervals = np.array([best_periodic_interval(adr.model)[0] for adr in fs.adrs])

    def select(self, state: FleetState) -> np.ndarray:
        ids = np.arange(self.fs.size)
        due = np.flatnonzero((state.event - 1 + ids) % self.intervals == 0)
        return due[: self.fs.crews]


def make_policy(fs: FleetScenario, policy_id: PolicyId) -> FleetPolicy:
    policy_id = PolicyId(policy_id)
    if policy_id in (PolicyId.full_optimal, PolicyId.slow_optimal):
        if not fs.identical_costs:
            raise ModelValidationError(f"{policy_id.value} requires identical repair costs")
        model = fs.adrs[0].model
        if policy_id == PolicyId.full_optimal:
            return FullOptimal(fs, full_info_optimal_policy(model, fs.size, fs.crews))
        return SlowOptimal(fs, SlowInfoOptimalPolicy(model, fs.size, fs.crews))
    return {
        PolicyId.full_whittle: FullWhittle,
        PolicyId.slow_whittle: SlowWhittle,
        PolicyId.partial_whittle: PartialWhittle,
        PolicyId.periodic: Periodic,
    }[policy_id](fs)


# --- Random streams ---
@dataclass(frozen=True)
class RunStreams:
    """Everything random in one run, drawn up front."""

    fail: np.ndarray  # (T, D) uniforms; a working ADR fails when below p
    noise: np.ndarray  # (T, D, L) standard normal meter noise
    shed: np.ndarray  # (T, D) standard normal shed draws
    shift: np.ndarray  # (T, D) uniforms mapped to clock offsets


def run_streams(fs: FleetScenario, run_indices: Sequence[int]) -> List[RunStreams]:
    """
    Streams for the requested runs, derived from (seed, run index).

    Raises:
        SeedConflictError: a run index is requested twice.
    """
    if len(set(run_indices)) != len(run_indices):
        raise SeedConflictError(f"duplicate run indices in {list(run_indices)}")
    root = np.random.SeedSequence(fs.seed)
    _, runs_seq = root.spawn(2)
    children = runs_seq.spawn(max(run_indices) + 1 if run_indices else 0)
    shape = (fs.horizon, fs.size)
    length = fs.adrs[0].scenario.reading_length
    streams = []
    for r in run_indices:
        rng = np.random.default_rng(children[r])
        streams.append(
            RunStreams(
                fail=rng.random(shape),
                noise=rng.standard_normal(shape + (length,)),
                shed=rng.standard_normal(shape),
                shift=rng.random(shape),
            )
        )
    return streams


def scenario_rng(seed: int) -> np.random.Generator:
    """Generator for per-ADR scenario draws (costs, SNRs), independent of the run streams."""
    scenario_seq, _ = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(scenario_seq)


# --- Simulation ---
def _readings(fs: FleetScenario, rows: np.ndarray, working: np.ndarray, noise: np.ndarray,
              shed: np.ndarray, shift: np.ndarray) -> np.ndarray:
    template = fs.adrs[0].scenario
    sigma = np.array([fs.adrs[i].scenario.sigma for i in rows])
    x = template.baseline + sigma[:, None] * noise[rows]
    if template.case.random_shed:
        eta0 = np.array([fs.adrs[i].scenario.eta0 for i in rows])
        r = template.nu0 + shed[rows] / np.sqrt(eta0)
    else:
        r = np.full(len(rows), template.nu0)
    if template.case.mismatched:
        slots = np.minimum(np.floor(shift[rows] * (2 * template.d + 1)), 2 * template.d).astype(np.int64)
    else:
        slots = np.zeros(len(rows), dtype=np.int64)
    windows = template.window_mask()[slots]
    return x - (working[rows] * r)[:, None] * windows


def _update_beliefs(fs: FleetScenario, belief: np.ndarray, repaired: np.ndarray, working: np.ndarray,
                    streams: RunStreams, t: int) -> np.ndarray:
    model = fs.adrs[0].model
    template = fs.adrs[0].scenario
    new_belief = np.full(fs.size, 1.0 - model.p)
    idle = np.setdiff1d(np.arange(fs.size), repaired)
    if idle.size:
        x = _readings(fs, idle, working, streams.noise[t], streams.shed[t], streams.shift[t])
        sigma = np.array([fs.adrs[i].scenario.sigma for i in idle])
        eta0 = np.array([fs.adrs[i].scenario.eta0 for i in idle])
        log_q0, log_q1 = likelihood_batch(template, x, sigma=sigma, eta0=eta0)
        new_belief[idle] = belief_update_batch(model, belief[idle], log_q0, log_q1)
    return new_belief


def event_reward(fs: FleetScenario, working: np.ndarray, repaired: np.ndarray) -> float:
    """Idle working ADRs earn lambda, repaired ADRs earn lambda - c, everyone pays theta."""
    lam = np.array([adr.model.lam for adr in fs.adrs])
    cost = np.array([adr.model.c for adr in fs.adrs])
    theta = np.array([adr.model.theta for adr in fs.adrs])
    is_repaired = np.zeros(fs.size, dtype=bool)
    is_repaired[repaired] = True
    earned = np.where(is_repaired, lam - cost, np.where(working, lam, 0.0))
    return float(np.sum(earned - theta))


def simulate_run(fs: FleetScenario, policy: FleetPolicy, streams: RunStreams
                 ) -> Tuple[float, List[Tuple[int, ...]]]:
    """Discounted T-event reward of one run and the repair set of every event."""
    model = fs.adrs[0].model
    working = np.ones(fs.size, dtype=bool)
    belief = np.ones(fs.size)
    slow = np.full(fs.size, SLOW_FRESH, dtype=np.int64)
    total = 0.0
    decisions = []

    for t in range(fs.horizon):
        state = FleetState(event=t + 1, working=working.copy(), belief=belief, slow=slow)
        repaired = np.asarray(policy.select(state), dtype=np.int64)
        decisions.append(tuple(int(i) for i in repaired))

        during = working.copy()
        during[repaired] = True
        total += model.beta ** t * event_reward(fs, during, repaired)

        if policy.needs_beliefs:
            belief = _update_beliefs(fs, belief, repaired, during, streams, t)
        slow = np.where(during, SLOW_AFTER_EVENT, SLOW_BROKEN)
        working = during & (streams.fail[t] >= model.p)

    return total, decisions


def evaluate_policy(
    fs: FleetScenario,
    policy_id: PolicyId,
    threads: int = 1,
    run_indices: Optional[Sequence[int]] = None,
    streams: Optional[List[RunStreams]] = None,
) -> Tuple[PolicyStats, List[List[Tuple[int, ...]]]]:
    """Per-run discounted rewards of one policy, with its decision traces."""
    run_indices = list(range(fs.runs)) if run_indices is None else list(run_indices)
    streams = run_streams(fs, run_indices) if streams is None else streams
    policy = make_policy(fs, policy_id)

    def one(s: RunStreams):
        return simulate_run(fs, policy, s)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, streams))
    else:
        results = [one(s) for s in streams]

    per_run = np.array([total for total, _ in results])
    stderr = float(np.std(per_run, ddof=1) / math.sqrt(len(per_run))) if len(per_run) > 1 else 0.0
    stats = PolicyStats(policy=PolicyId(policy_id), mean=float(np.mean(per_run)), stderr=stderr, per_run=per_run)
    fleet_logger.info("Policy evaluated", policy=PolicyId(policy_id).value, runs=len(per_run), mean=stats.mean)
    return stats, [trace for _, trace in results]


def simulate(
    fs: FleetScenario,
    policy_id: PolicyId,
    reference_id: PolicyId,
    threads: int = 1,
    trace: bool = False,
    run_indices: Optional[Sequence[int]] = None,
) -> SimReport:
    """Compare a policy against a reference on shared run streams."""
    run_indices = list(range(fs.runs)) if run_indices is None else list(run_indices)
    streams = run_streams(fs, run_indices)
    policy, decisions = evaluate_policy(fs, policy_id, threads, run_indices, streams)
    reference, reference_decisions = evaluate_policy(fs, reference_id, threads, run_indices, streams)
    return SimReport(
        policy=policy,
        reference=reference,
        runs=len(run_indices),
        snr_label=fs.snr_label,
        decisions=decisions if trace else None,
        reference_decisions=reference_decisions if trace else None,
    )


def simulate_table(
    fs: FleetScenario,
    policies: Iterable[PolicyId],
    references: Iterable[PolicyId],
    threads: int = 1,
) -> List[SimReport]:
    """One report per (policy, reference) pair; each policy is simulated once."""
    policies = [PolicyId(p) for p in policies]
    references = [PolicyId(r) for r in references]
    run_indices = list(range(fs.runs))
    streams = run_streams(fs, run_indices)
    evaluated: Dict[PolicyId, PolicyStats] = {}
    for policy_id in dict.fromkeys(policies + references):
        evaluated[policy_id], _ = evaluate_policy(fs, policy_id, threads, run_indices, streams)
    return [
        SimReport(policy=evaluated[p], reference=evaluated[r], runs=fs.runs, snr_label=fs.snr_label)
        for r in references
        for p in policies
        if p != r
    ]


def decision_disagreement(trace_a: List[List[Tuple[int, ...]]], trace_b: List[List[Tuple[int, ...]]],
                          adr_count: int) -> float:
    """Fraction of per-ADR, per-event repair decisions on which two traces differ."""
    differing = 0
    decisions = 0
    for run_a, run_b in zip(trace_a, trace_b):
        for event_a, event_b in zip(run_a, run_b):
            differing += len(set(event_a) ^ set(event_b))
            decisions += adr_count
    return differing / decisions if decisions else 0.0


# --- Fleet construction ---
def _fleet_models(model: AdrModel, adr_count: int, cost_mode: CostMode, cost_high: float,
                  rng: np.random.Generator) -> List[AdrModel]:
    if CostMode(cost_mode) == CostMode.identical:
        return [model] * adr_count
    # (0, cost_high * lambda]
    costs = (1.0 - rng.random(adr_count)) * cost_high * model.lam
    return [model.with_cost(c) for c in costs]


def build_fleet(
    model: AdrModel,
    scenarios: Sequence[ObsScenario],
    crews: int,
    horizon: int,
    runs: int,
    seed: int,
    cost_mode: CostMode = CostMode.identical,
    cost_high: float = 6.5,
    snr_label: str = "",
    policies: Iterable[PolicyId] = (),
    grid_points: int = 100,
    sample_count: int = 5000,
    epsilon: Optional[float] = None,
    threads: int = 1,
    cache: Optional[ContinuationCache] = None,
    rng: Optional[np.random.Generator] = None,
) -> FleetScenario:
    """
    Assemble a fleet: per-ADR costs, full- and slow-information indices, and
    (when a partial-information policy is requested) Whittle tables.

    Distinct observation scenarios share a continuation table; distinct
    (scenario, cost) pairs share a Whittle table.
    """
    rng = rng or scenario_rng(seed)
    models = _fleet_models(model, len(scenarios), cost_mode, cost_high, rng)
    grid = BeliefGrid(n=grid_points)

    needs_tables = PolicyId.partial_whittle in {PolicyId(p) for p in policies}
    tables = {}
    if needs_tables:
        keys = list(dict.fromkeys(zip(scenarios, models)))
        continuations = {}
        for scn in dict.fromkeys(scenarios):
            continuations[scn] = continuation_for(model, scn, grid, sample_count, cache=cache, threads=threads)

        def table_for(key):
            scn, m = key
            cont = continuations[scn]
            return build_whittle_table(m, cont, epsilon=epsilon, cache=ThresholdProbeCache(m, cont))

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                built = list(pool.map(table_for, keys))
        else:
            built = [table_for(key) for key in keys]
        tables = dict(zip(keys, built))

    full_cache: Dict[AdrModel, Tuple[float, float]] = {}
    slow_cache: Dict[AdrModel, Tuple[float, float, float]] = {}
    adrs = []
    for i, (scn, m) in enumerate(zip(scenarios, models)):
        if m not in full_cache:
            full_cache[m] = full_info_index(m, epsilon)
            slow_cache[m] = slow_info_index(m, epsilon)
        adrs.append(
            FleetAdr(
                adr_id=i,
                model=m,
                scenario=scn,
                whittle=tables.get((scn, m)),
                full_info_index=full_cache[m],
                slow_info_index=slow_cache[m],
            )
        )

    fleet_logger.info(
        "Fleet built",
        adrs=len(adrs), crews=crews, cost_mode=CostMode(cost_mode).value,
        whittle_tables=len(tables), snr=snr_label,
    )
    return FleetScenario(
        adrs=adrs, crews=crews, horizon=horizon, runs=runs, seed=seed,
        cost_mode=CostMode(cost_mode), snr_label=snr_label,
    )
