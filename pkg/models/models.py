"""
Domain models for the ADR maintenance problem.
"""
import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.exceptions import ModelValidationError


# --- ENUM Types ---
class Action(enum.IntEnum):
    DoNothing = 0  # alpha_0
    SendCrew = 1  # alpha_1


class AdrState(enum.IntEnum):
    Broken = 0  # gamma_0
    Working = 1  # gamma_1


class ObservationCase(str, enum.Enum):
    A = "A"  # synchronized clocks, deterministic shed
    B = "B"  # mismatched clocks, deterministic shed
    C = "C"  # synchronized clocks, random shed
    D = "D"  # mismatched clocks, random shed

    @property
    def mismatched(self) -> bool:
        return self in (ObservationCase.B, ObservationCase.D)

    @property
    def random_shed(self) -> bool:
        return self in (ObservationCase.C, ObservationCase.D)


class QuadratureRule(str, enum.Enum):
    rectangle = "rectangle"
    gauss_hermite = "gauss_hermite"


class SolveMethod(str, enum.Enum):
    vi = "vi"
    lp = "lp"


class CostMode(str, enum.Enum):
    identical = "identical"
    uniform = "uniform"


class PolicyId(str, enum.Enum):
    full_optimal = "full_optimal"
    full_whittle = "full_whittle"
    slow_optimal = "slow_optimal"
    slow_whittle = "slow_whittle"
    partial_whittle = "partial_whittle"
    periodic = "periodic"


# --- Single-ADR model ---
class AdrModel(BaseModel):
    """Economic and failure parameters of one ADR."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lam: float = Field(1.0, alias="lambda", ge=0, description="Expected DR savings per event")
    c: float = Field(3.0, ge=0, description="Crew dispatch cost")
    theta: float = Field(0.0, ge=0, description="Customer compensation, subtracted from every reward")
    p: float = Field(0.05, gt=0, lt=1, description="Failure probability between events")
    beta: float = Field(0.9, gt=0, lt=1, description="Discount factor between events")

    def with_cost(self, c: float) -> "AdrModel":
        return self.model_copy(update={"c": float(c)})


class LikelihoodPair(BaseModel):
    """Log-densities of one reading vector under a broken and a working ADR."""

    model_config = ConfigDict(frozen=True)

    log_q0: float
    log_q1: float

    @property
    def log_ratio(self) -> float:
        return self.log_q1 - self.log_q0


class ObsScenario(BaseModel):
    """Observation model of one ADR."""

    model_config = ConfigDict(frozen=True)

    y: Tuple[float, ...] = Field(..., description="Baseline consumption, length m + 2d")
    sigma: float = Field(..., gt=0, description="Meter noise standard deviation")
    nu0: float = Field(..., ge=0, description="Expected load-shed")
    eta0: float = Field(math.inf, gt=0, description="Load-shed precision; +inf for deterministic shed")
    d: int = Field(0, ge=0, description="Maximum clock mismatch in time steps")
    m: int = Field(..., ge=1, description="Readings per DR event")
    case: ObservationCase = ObservationCase.A

    @model_validator(mode="after")
    def _check_case(self) -> "ObsScenario":
        if not self.case.mismatched and self.d != 0:
            raise ValueError(f"case {self.case.value} requires d = 0, got d = {self.d}")
        if len(self.y) != self.m + 2 * self.d:
            raise ValueError(f"baseline length {len(self.y)} does not match m + 2d = {self.m + 2 * self.d}")
        return self

    @classmethod
    def from_snr(
        cls,
        case: ObservationCase,
        snr_db: float,
        m: int = 10,
        nu0: float = 1.0,
        d: int = 0,
        eta0_relative: float = 0.1,
        baseline: float = 5.0,
        y: Optional[Tuple[float, ...]] = None,
    ) -> "ObsScenario":
        """Build a scenario from an SNR in dB; shed sd = eta0_relative * sigma."""
        case = ObservationCase(case)
        d = d if case.mismatched else 0
        sigma = nu0 * 10.0 ** (-snr_db / 20.0)
        eta0 = 1.0 / (eta0_relative * sigma) ** 2 if case.random_shed else math.inf
        if y is None:
            y = tuple([float(baseline)] * (m + 2 * d))
        return cls(y=tuple(float(v) for v in y), sigma=sigma, nu0=nu0, eta0=eta0, d=d, m=m, case=case)

    @property
    def deterministic_shed(self) -> bool:
        return not self.case.random_shed

    @property
    def reading_length(self) -> int:
        return self.m + 2 * self.d

    @property
    def point_dimension(self) -> int:
        """Unit-hypercube dimension consumed by one sampled reading."""
        return self.reading_length + 1 + int(self.case.random_shed) + int(self.case.mismatched)

    @property
    def baseline(self) -> np.ndarray:
        return np.asarray(self.y, dtype=float)

    @property
    def shifts(self) -> np.ndarray:
        """Clock offsets delta = -d..d."""
        return np.arange(-self.d, self.d + 1)

    def window_mask(self) -> np.ndarray:
        """Boolean (2d+1, m+2d) matrix; row delta+d marks I_delta = {d+delta, ..., d+delta+m-1} (0-based)."""
        mask = np.zeros((2 * self.d + 1, self.reading_length), dtype=bool)
        for row, delta in enumerate(self.shifts):
            start = self.d + int(delta)
            mask[row, start:start + self.m] = True
        return mask

    @property
    def snr_db(self) -> float:
        return 20.0 * math.log10(self.nu0 / self.sigma) if self.nu0 > 0 else -math.inf


# --- Inference results ---
@dataclass(frozen=True)
class VbPosterior:
    """Mean-field posterior Delta(delta) g(r) for one reading vector."""

    delta_probs: np.ndarray
    nu: float
    eta: float
    iterations: int
    converged: bool

    @property
    def map_shift(self) -> int:
        d = (len(self.delta_probs) - 1) // 2
        return int(np.argmax(self.delta_probs)) - d


@dataclass(frozen=True)
class VbPosteriorBatch:
    """Row-wise posteriors for a matrix of reading vectors."""

    delta_probs: np.ndarray  # (rows, 2d+1)
    nu: np.ndarray  # (rows,)
    eta: np.ndarray  # (rows,)
    iterations: np.ndarray  # (rows,)
    converged: np.ndarray  # (rows,)

    def __len__(self) -> int:
        return len(self.nu)

    def row(self, i: int) -> VbPosterior:
        return VbPosterior(
            delta_probs=self.delta_probs[i].copy(),
            nu=float(self.nu[i]),
            eta=float(self.eta[i]),
            iterations=int(self.iterations[i]),
            converged=bool(self.converged[i]),
        )


# --- Discretized belief MDP ---
class BeliefGrid(BaseModel):
    """Belief points {k/n : k = 0..n} with ceiling rounding."""

    model_config = ConfigDict(frozen=True)

    n: int = Field(100, ge=2)

    # Float products such as 0.95 * 100 land a hair above the integer
    rounding_slack: float = 1e-9

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def round_up(self, b):
        """Map b in ((k-1)/n, k/n] to k; works on scalars and arrays."""
        k = np.ceil(np.asarray(b, dtype=float) * self.n - self.rounding_slack)
        k = np.clip(k, 0, self.n).astype(np.int64)
        return int(k) if np.ndim(k) == 0 else k


@dataclass(frozen=True)
class ContinuationTable:
    """Sampled passive transitions of the discretized belief MDP."""

    n: int
    next_index: np.ndarray  # (n+1, N) grid indices
    reset_index: int
    sample_count: int
    transition: Optional[np.ndarray] = field(default=None, repr=False)  # (n+1, n+1) row-stochastic

    def passive_matrix(self) -> np.ndarray:
        if self.transition is not None:
            return self.transition
        size = self.n + 1
        counts = np.zeros((size, size))
        rows = np.repeat(np.arange(size), self.next_index.shape[1])
        np.add.at(counts, (rows, self.next_index.ravel()), 1.0)
        return counts / self.next_index.shape[1]


@dataclass(frozen=True)
class ValueTable:
    """Solved value vector of the (subsidy) belief MDP."""

    v: np.ndarray
    threshold_index: int
    subsidy: float = 0.0
    iterations: int = 0
    method: SolveMethod = SolveMethod.vi
    residual: float = 0.0


@dataclass(frozen=True)
class ThresholdResult:
    """Outcome of one build-solve-extract run."""

    n: int
    sample_count: int
    case: ObservationCase
    b_star: Optional[float]
    value_at_one: float
    value_at_zero: float
    wall_seconds: float


@dataclass(frozen=True)
class WhittleTable:
    """Whittle index mu*(k/n) for every grid belief of one ADR."""

    index_values: np.ndarray
    mu_bar: float
    epsilon: float

    @property
    def n(self) -> int:
        return len(self.index_values) - 1

    @cached_property
    def grid(self) -> BeliefGrid:
        return BeliefGrid(n=self.n)

    def lookup(self, belief):
        """Index at the grid point obtained by rounding belief up."""
        return self.index_values[self.grid.round_up(belief)]

    def to_frame(self) -> pd.DataFrame:
        k = np.arange(self.n + 1)
        return pd.DataFrame({"k": k, "belief": k / self.n, "index": self.index_values})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, mu_bar: float = math.nan, epsilon: float = math.nan) -> "WhittleTable":
        ordered = frame.sort_values("k")
        return cls(index_values=ordered["index"].to_numpy(dtype=float), mu_bar=mu_bar, epsilon=epsilon)


# --- Fleet ---
@dataclass(frozen=True)
class FleetAdr:
    """One ADR of a fleet with everything the policies need."""

    adr_id: int
    model: AdrModel
    scenario: ObsScenario
    whittle: Optional[WhittleTable] = None
    full_info_index: Tuple[float, float] = (0.0, 0.0)  # (broken, working)
    slow_info_index: Tuple[float, float, float] = (0.0, 0.0, 0.0)  # beliefs (0, 1-p, 1)


@dataclass
class FleetScenario:
    """D ADRs sharing M crews over a horizon of T events."""

    adrs: List[FleetAdr]
    crews: int
    horizon: int
    runs: int
    seed: int
    cost_mode: CostMode = CostMode.identical
    snr_label: str = "0"

    def __post_init__(self):
        """
        Raises:
            ModelValidationError: M > D, T < 1, or ADRs that differ in a
                parameter the simulator shares across the fleet.
        """
        if self.crews > len(self.adrs):
            raise ModelValidationError(f"M = {self.crews} exceeds D = {len(self.adrs)}")
        if self.horizon < 1:
            raise ModelValidationError("horizon T must be at least 1")
        if self.adrs:
            first = self.adrs[0]
            for adr in self.adrs[1:]:
                if (adr.model.p, adr.model.beta) != (first.model.p, first.model.beta):
                    raise ModelValidationError(f"ADR {adr.adr_id}: all ADRs of a fleet must share p and beta")
                if (adr.scenario.case, adr.scenario.m, adr.scenario.d) != (
                    first.scenario.case, first.scenario.m, first.scenario.d
                ):
                    raise ModelValidationError(
                        f"ADR {adr.adr_id}: all ADRs of a fleet must share the observation case, m and d"
                    )
                # readings are drawn around the first ADR's baseline and shed
                if (adr.scenario.nu0, adr.scenario.y) != (first.scenario.nu0, first.scenario.y):
                    raise ModelValidationError(
                        f"ADR {adr.adr_id}: all ADRs of a fleet must share nu0 and the baseline y"
                    )

    @property
    def size(self) -> int:
        return len(self.adrs)

    @property
    def identical_costs(self) -> bool:
        costs = {adr.model.c for adr in self.adrs}
        return len(costs) == 1


@dataclass(frozen=True)
class PolicyStats:
    """Discounted-reward statistics of one policy over all runs."""

    policy: PolicyId
    mean: float
    stderr: float
    per_run: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SimReport:
    """Comparison of one policy against a reference on shared random streams."""

    policy: PolicyStats
    reference: PolicyStats
    runs: int
    snr_label: str
    decisions: Optional[List[List[Tuple[int, ...]]]] = field(default=None, repr=False)
    reference_decisions: Optional[List[List[Tuple[int, ...]]]] = field(default=None, repr=False)

    @property
    def err_percent(self) -> float:
        """100 (V_ref - V_pol) / V_ref; negative when the policy beats the reference."""
        return 100.0 * (self.reference.mean - self.policy.mean) / self.reference.mean

    @property
    def err_stderr(self) -> float:
        """Standard error of the paired per-run relative difference, in percent."""
        diff = 100.0 * (self.reference.per_run - self.policy.per_run) / self.reference.mean
        if len(diff) < 2:
            return 0.0
        return float(np.std(diff, ddof=1) / math.sqrt(len(diff)))
