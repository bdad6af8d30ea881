"""
Scenario file schema: a TOML document with [model], [observation], [solver],
[whittle] and optional [fleet] sections. Unknown keys are rejected.
"""
import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.exceptions import ScenarioParseError
from models.models import AdrModel, CostMode, ObservationCase, ObsScenario, SolveMethod

MISMATCH_DEFAULT = 2


class SectionBase(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ModelSection(SectionBase):
    """Economics and failure law of one ADR."""
    lam: float = Field(1.0, alias="lambda", ge=0)
    c: float = Field(3.0, ge=0)
    theta: float = Field(0.0, ge=0)
    p: float = Field(0.05, gt=0, lt=1)
    beta: float = Field(0.9, gt=0, lt=1)


class ObservationSection(SectionBase):
    """Meter reading model; give exactly one of sigma and snr_db."""
    case: ObservationCase = ObservationCase.A
    m: int = Field(10, ge=1)
    sigma: Optional[float] = Field(None, gt=0)
    snr_db: Optional[float] = None
    nu0: float = Field(1.0, ge=0)
    eta0_relative: float = Field(0.1, gt=0, description="Shed standard deviation as a multiple of sigma")
    d: Optional[int] = Field(None, ge=0, description="Defaults to 2 for mismatched clocks, 0 otherwise")
    baseline: float = 5.0

    @model_validator(mode="after")
    def _one_noise_level(self) -> "ObservationSection":
        if (self.sigma is None) == (self.snr_db is None):
            raise ValueError("give exactly one of sigma and snr_db")
        if self.d and not self.case.mismatched:
            raise ValueError(f"case {self.case.value} has synchronized clocks and requires d = 0")
        return self


class SolverSection(SectionBase):
    n: int = Field(100, ge=2)
    N: int = Field(5000, ge=1)
    method: SolveMethod = SolveMethod.vi
    tol: float = Field(1e-9, gt=0)
    seed: int = Field(0, ge=0, description="Sobol start offset")


class WhittleSection(SectionBase):
    epsilon: Optional[float] = Field(None, gt=0, description="Defaults to 1e-3 lambda")


class FleetSection(SectionBase):
    D: int = Field(100, ge=1)
    M: int = Field(5, ge=0)
    cost_mode: CostMode = CostMode.identical
    cost_high: float = Field(6.5, gt=0, description="Uniform costs are drawn from (0, cost_high * lambda]")
    snr_mode: Literal["fixed", "uniform"] = "fixed"
    snr_low: float = -5.0
    snr_high: float = 5.0
    T: int = Field(44, ge=1)
    runs: int = Field(100, ge=1)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_counts(self) -> "FleetSection":
        if self.M > self.D:
            raise ValueError(f"M = {self.M} exceeds D = {self.D}")
        if self.snr_low > self.snr_high:
            raise ValueError("snr_low exceeds snr_high")
        return self


class ScenarioFile(SectionBase):
    """Complete experiment configuration."""
    model: ModelSection = Field(default_factory=ModelSection)
    observation: ObservationSection
    solver: SolverSection = Field(default_factory=SolverSection)
    whittle: WhittleSection = Field(default_factory=WhittleSection)
    fleet: Optional[FleetSection] = None

    # --- parsing ---
    @classmethod
    def from_text(cls, text: str, path: Optional[str] = None) -> "ScenarioFile":
        """
        Parse and validate a scenario document.

        Raises:
            ScenarioParseError: syntax or validation failure, with the line
                of the offending key when it can be located.
        """
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            match = re.search(r"line (\d+)", str(e))
            raise ScenarioParseError(str(e), line=int(match.group(1)) if match else None, path=path)

        try:
            scenario = cls.model_validate(raw)
        except ValidationError as e:
            error = e.errors()[0]
            loc = [str(part) for part in error["loc"]]
            raise ScenarioParseError(
                f"{'.'.join(loc) or 'scenario'}: {error['msg']}", line=locate_key(text, loc), path=path
            )

        # cross-field checks of the observation model (e.g. d against case)
        try:
            scenario.obs_scenario()
        except ValidationError as e:
            raise ScenarioParseError(
                f"observation: {e.errors()[0]['msg']}", line=locate_key(text, ["observation"]), path=path
            )
        return scenario

    @classmethod
    def load(cls, path: str) -> "ScenarioFile":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ScenarioParseError(f"cannot read scenario: {e.strerror}", path=path)
        return cls.from_text(text, path=str(path))

    def to_text(self) -> str:
        """Canonical TOML; parsing the result yields an equal scenario."""
        return tomli_w.dumps(self.model_dump(mode="json", by_alias=True, exclude_none=True))

    # --- domain objects ---
    def adr_model(self) -> AdrModel:
        return AdrModel(**self.model.model_dump(by_alias=True))

    def mismatch(self, case: ObservationCase) -> int:
        if not case.mismatched:
            return 0
        return MISMATCH_DEFAULT if self.observation.d is None else self.observation.d

    def obs_scenario(
        self, snr_db: Optional[float] = None, case: Optional[ObservationCase] = None
    ) -> ObsScenario:
        """Observation scenario, optionally overriding SNR and case."""
        obs = self.observation
        case = ObservationCase(case or obs.case)
        d = self.mismatch(case)
        snr_db = obs.snr_db if snr_db is None else snr_db
        if snr_db is not None:
            return ObsScenario.from_snr(
                case, snr_db, m=obs.m, nu0=obs.nu0, d=d, eta0_relative=obs.eta0_relative, baseline=obs.baseline
            )
        eta0 = 1.0 / (obs.eta0_relative * obs.sigma) ** 2 if case.random_shed else float("inf")
        return ObsScenario(
            y=tuple([obs.baseline] * (obs.m + 2 * d)), sigma=obs.sigma, nu0=obs.nu0, eta0=eta0, d=d, m=obs.m, case=case
        )

    def fleet_snrs(self, rng: np.random.Generator, snr_db: Optional[float] = None) -> List[float]:
        """Per-ADR SNRs; drawn once from the scenario generator in uniform mode."""
        fleet = self.fleet or FleetSection()
        if fleet.snr_mode == "uniform" and snr_db is None:
            return list(rng.uniform(fleet.snr_low, fleet.snr_high, size=fleet.D))
        if snr_db is None:
            snr_db = self.observation.snr_db
            if snr_db is None:
                snr_db = 20.0 * np.log10(self.observation.nu0 / self.observation.sigma)
        return [float(snr_db)] * fleet.D


def locate_key(text: str, loc: List[str]) -> Optional[int]:
    """1-based line of `key =` inside [section], else the section header line."""
    if not loc:
        return None
    section = loc[0]
    key = loc[1] if len(loc) > 1 else None
    current = None
    header_line = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([^\]]+)\]", stripped)
        if header:
            current = header.group(1).strip()
            if current == section:
                header_line = number
            continue
        if current == section and key and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return number
    return header_line
