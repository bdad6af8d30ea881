"""
Discretized belief-state MDP: sampled continuation tables, Bellman solves
by value iteration or linear programming, and threshold extraction.
"""
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from core.config import settings
from core.exceptions import CacheMismatchError, ConvergenceError, SolverFailure
from core.logging import solver_logger
from models.models import (
    AdrModel,
    BeliefGrid,
    ContinuationTable,
    ObsScenario,
    SolveMethod,
    ThresholdResult,
    ValueTable,
)
from services.observation_service import QmcStream, likelihood_batch, sample_components
from services.pomdp_service import belief_update_batch


def build_continuation(
    model: AdrModel,
    scn: ObsScenario,
    grid: BeliefGrid,
    sample_count: int,
    qmc: Optional[QmcStream] = None,
    threads: int = 1,
) -> ContinuationTable:
    """
    Sample passive grid transitions for every belief k/n.

    The same N points serve every grid row: each point yields a broken and a
    working reading, and row k picks the working one when the selector
    coordinate falls below k/n. Likelihoods (and variational fits) are
    therefore computed for 2N readings, not (n+1)N.
    """
    if sample_count < 1:
        raise ValueError("sample count N must be at least 1")
    qmc = qmc or QmcStream(scn.point_dimension)
    points = qmc.take(sample_count)
    sample = sample_components(scn, points)

    q0_broken, q1_broken = likelihood_batch(scn, sample.broken)
    q0_working, q1_working = likelihood_batch(scn, sample.working)

    next_index = np.empty((grid.n + 1, sample_count), dtype=np.int32)

    def fill(rows: np.ndarray) -> None:
        beliefs = rows[:, None] / grid.n
        working = sample.selector[None, :] < beliefs
        log_q0 = np.where(working, q0_working, q0_broken)
        log_q1 = np.where(working, q1_working, q1_broken)
        next_index[rows] = grid.round_up(belief_update_batch(model, beliefs, log_q0, log_q1))

    chunks = np.array_split(np.arange(grid.n + 1), max(1, threads))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, chunks))
    else:
        for rows in chunks:
            fill(rows)

    reset_index = grid.round_up(1.0 - model.p)
    solver_logger.debug("Continuation table built", n=grid.n, samples=sample_count, case=scn.case.value)
    return ContinuationTable(n=grid.n, next_index=next_index, reset_index=reset_index, sample_count=sample_count)


def discrete_channel_table(model: AdrModel, grid: BeliefGrid, emission: np.ndarray) -> ContinuationTable:
    """
    Exact passive transitions for a finite observation channel.

    emission[s, o] is the probability of outcome o in state s (row 0 broken,
    row 1 working).
    """
    emission = np.asarray(emission, dtype=float)
    size = grid.n + 1
    transition = np.zeros((size, size))
    beliefs = grid.points
    for o in range(emission.shape[1]):
        weight = beliefs * emission[1, o] + (1.0 - beliefs) * emission[0, o]
        with np.errstate(divide="ignore", invalid="ignore"):
            post = np.where(weight > 0, beliefs * emission[1, o] / weight, 0.0)
        target = grid.round_up((1.0 - model.p) * post)
        np.add.at(transition, (np.arange(size), target), weight)
    return ContinuationTable(
        n=grid.n,
        next_index=np.zeros((size, 0), dtype=np.int32),
        reset_index=grid.round_up(1.0 - model.p),
        sample_count=0,
        transition=transition,
    )


def transition_matrix(cont: ContinuationTable) -> np.ndarray:
    """Row-stochastic (n+1)x(n+1) passive transition matrix."""
    return cont.passive_matrix()


def q_values(
    model: AdrModel,
    cont: ContinuationTable,
    v: np.ndarray,
    subsidy: float = 0.0,
    passive: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """(passive, repair) action values for every grid point under value vector v."""
    passive = transition_matrix(cont) if passive is None else passive
    k = np.arange(cont.n + 1)
    idle = model.lam * k / cont.n - model.theta + subsidy + model.beta * (passive @ v)
    repair = np.full(cont.n + 1, model.lam - model.c - model.theta + model.beta * v[cont.reset_index])
    return idle, repair


def repair_set(
    model: AdrModel, cont: ContinuationTable, v: np.ndarray, subsidy: float = 0.0,
    passive: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Grid points where repair attains the Bellman max; ties count as repair."""
    idle, repair = q_values(model, cont, v, subsidy, passive)
    slack = settings.tie_tolerance * (1.0 + np.max(np.abs(v)))
    return repair >= idle - slack


def _threshold_from(mask: np.ndarray) -> int:
    hits = np.flatnonzero(mask)
    return int(hits[-1]) if hits.size else -1


def _value_iteration(
    model: AdrModel, cont: ContinuationTable, subsidy: float, tol: float,
    passive: np.ndarray, initial: Optional[np.ndarray],
) -> Tuple[np.ndarray, int, float]:
    v = np.zeros(cont.n + 1) if initial is None else np.array(initial, dtype=float)
    residual = np.inf
    for iteration in range(1, settings.vi_max_iterations + 1):
        idle, repair = q_values(model, cont, v, subsidy, passive)
        new_v = np.maximum(idle, repair)
        residual = float(np.max(np.abs(new_v - v)))
        v = new_v
        if residual < tol * (1.0 + np.max(np.abs(v))):
            return v, iteration, residual
    raise ConvergenceError(settings.vi_max_iterations, residual)


def _linear_program(
    model: AdrModel, cont: ContinuationTable, subsidy: float, passive: np.ndarray
) -> np.ndarray:
    size = cont.n + 1
    eye = np.eye(size)
    idle_rows = model.beta * passive - eye
    repair_rows = -eye.copy()
    repair_rows[:, cont.reset_index] += model.beta
    k = np.arange(size)
    idle_reward = model.lam * k / cont.n - model.theta + subsidy
    repair_reward = np.full(size, model.lam - model.c - model.theta)

    result = linprog(
        c=np.ones(size),
        A_ub=np.vstack([idle_rows, repair_rows]),
        b_ub=-np.concatenate([idle_reward, repair_reward]),
        bounds=[(None, None)] * size,
        method="highs",
    )
    if result.status != 0:
        raise SolverFailure(f"linear program failed: {result.message}")
    v = result.x

    # Exact evaluation of the LP-greedy policy removes interior-point slack
    idle, repair = q_values(model, cont, v, subsidy, passive)
    use_repair = repair >= idle
    reset = np.zeros(size)
    reset[cont.reset_index] = 1.0
    policy_rows = np.where(use_repair[:, None], reset[None, :], passive)
    rewards = np.where(use_repair, repair_reward, idle_reward)
    return np.linalg.solve(eye - model.beta * policy_rows, rewards)


def solve_value(
    model: AdrModel,
    cont: ContinuationTable,
    subsidy: float = 0.0,
    method: SolveMethod = SolveMethod.vi,
    tol: Optional[float] = None,
    initial: Optional[np.ndarray] = None,
    passive: Optional[np.ndarray] = None,
) -> ValueTable:
    """
    Solve V(k) = max{lambda k/n + mu + beta E[V(next)], lambda - c + beta V(reset)}.

    Raises:
        ConvergenceError: value iteration exhausted its iteration cap.
        SolverFailure: the linear program reported a failure.
    """
    tol = settings.vi_tolerance if tol is None else tol
    passive = transition_matrix(cont) if passive is None else passive
    method = SolveMethod(method)

    if method == SolveMethod.lp:
        v = _linear_program(model, cont, subsidy, passive)
        iterations, residual = 0, 0.0
    else:
        v, iterations, residual = _value_iteration(model, cont, subsidy, tol, passive, initial)

    threshold = _threshold_from(repair_set(model, cont, v, subsidy, passive))
    return ValueTable(
        v=v, threshold_index=threshold, subsidy=subsidy, iterations=iterations, method=method, residual=residual
    )


def extract_threshold(vt: ValueTable, grid: BeliefGrid) -> Optional[float]:
    """b* = threshold_index / n, or None when repair is never optimal."""
    if vt.threshold_index < 0:
        return None
    return vt.threshold_index / grid.n


class ContinuationCache:
    """On-disk .npz store of continuation tables keyed by content hash."""

    def __init__(self, directory: Optional[str] = None, enabled: Optional[bool] = None):
        self.directory = Path(directory or settings.cache_directory)
        self.enabled = settings.enable_cache if enabled is None else enabled

    @staticmethod
    def key(model: AdrModel, scn: ObsScenario, n: int, sample_count: int, seed: int) -> str:
        payload = json.dumps(
            {
                "scenario": scn.model_dump(mode="json"),
                "p": model.p,
                "n": n,
                "N": sample_count,
                "seed": seed,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.npz"

    def load(self, key: str, n: Optional[int] = None, sample_count: Optional[int] = None) -> Optional[ContinuationTable]:
        """
        Cached table for key, or None on a miss.

        Raises:
            CacheMismatchError: the stored arrays disagree with the requested
                grid size or sample count, or hold indices off the grid.
        """
        if not self.enabled:
            return None
        path = self._path(key)
        if not path.exists():
            solver_logger.debug("Continuation cache miss", key=key[:12])
            return None
        with np.load(path) as data:
            table = ContinuationTable(
                n=int(data["n"]),
                next_index=data["next_index"],
                reset_index=int(data["reset_index"]),
                sample_count=int(data["sample_count"]),
            )
        self._check(path, table, table.n if n is None else n, table.sample_count if sample_count is None else sample_count)
        solver_logger.info("Continuation cache hit", key=key[:12])
        return table

    @staticmethod
    def _check(path: Path, table: ContinuationTable, n: int, sample_count: int) -> None:
        expected = (n + 1, sample_count)
        if table.n != n or table.sample_count != sample_count or table.next_index.shape != expected:
            raise CacheMismatchError(
                str(path),
                f"stored n={table.n}, N={table.sample_count}, shape {table.next_index.shape}; expected shape {expected}",
            )
        if table.next_index.size and (table.next_index.min() < 0 or table.next_index.max() > n):
            raise CacheMismatchError(str(path), f"next-state indices outside 0..{n}")
        if not 0 <= table.reset_index <= n:
            raise CacheMismatchError(str(path), f"reset index {table.reset_index} outside 0..{n}")

    def store(self, key: str, table: ContinuationTable) -> None:
        if not self.enabled:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            self._path(key),
            n=table.n,
            next_index=table.next_index,
            reset_index=table.reset_index,
            sample_count=table.sample_count,
        )


def continuation_for(
    model: AdrModel,
    scn: ObsScenario,
    grid: BeliefGrid,
    sample_count: int,
    seed: int = 0,
    cache: Optional[ContinuationCache] = None,
    threads: int = 1,
) -> ContinuationTable:
    """Cached build; seed is the Sobol start offset."""
    cache = cache or ContinuationCache(enabled=False)
    key = cache.key(model, scn, grid.n, sample_count, seed)
    table = cache.load(key, n=grid.n, sample_count=sample_count)
    if table is None:
        table = build_continuation(
            model, scn, grid, sample_count, QmcStream(scn.point_dimension, start=seed), threads=threads
        )
        cache.store(key, table)
    return table


def solve_scenario(
    model: AdrModel,
    scn: ObsScenario,
    n: int = 100,
    sample_count: int = 5000,
    method: SolveMethod = SolveMethod.vi,
    seed: int = 0,
    cache: Optional[ContinuationCache] = None,
    threads: int = 1,
    tol: Optional[float] = None,
) -> ThresholdResult:
    """Build, solve and extract the threshold of one scenario."""
    started = time.perf_counter()
    grid = BeliefGrid(n=n)
    cont = continuation_for(model, scn, grid, sample_count, seed=seed, cache=cache, threads=threads)
    vt = solve_value(model, cont, method=method, tol=tol)
    elapsed = time.perf_counter() - started
    solver_logger.info(
        "Threshold solved",
        case=scn.case.value,
        n=n,
        samples=sample_count,
        threshold_index=vt.threshold_index,
        iterations=vt.iterations,
        seconds=round(elapsed, 3),
    )
    return ThresholdResult(
        n=n,
        sample_count=sample_count,
        case=scn.case,
        b_star=extract_threshold(vt, grid),
        value_at_one=float(vt.v[-1]),
        value_at_zero=float(vt.v[0]),
        wall_seconds=elapsed,
    )
