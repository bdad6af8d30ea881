"""
CSV report rows. Every row carries the toolkit version; column order is the
field order below.
"""
import sys
from typing import List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field

from core.config import settings

FLOAT_FORMAT = "%.10g"


class ReportRow(BaseModel):
    version: str = Field(default_factory=lambda: settings.app_version)


class ThresholdRow(ReportRow):
    """One build-solve-extract run."""
    n: int
    N: int
    case: str
    b_star: Optional[float] = None
    V_at_1: float
    V_at_0: float
    periodic_improvement_percent: float
    wall_seconds: Optional[float] = None  # filled only with --timing


class WhittleRow(ReportRow):
    k: int
    belief: float
    index: float


class SimulationRow(ReportRow):
    snr: str
    policy: str
    reference: str
    err_percent: float
    stderr: float
    runs: int
    policy_mean: float
    reference_mean: float


class PeriodicRow(ReportRow):
    q: int
    U: float
    optimal: bool


def rows_to_frame(rows: Sequence[ReportRow]) -> pd.DataFrame:
    if not rows:
        return pd.DataFrame()
    columns = list(type(rows[0]).model_fields)
    # version last, after the data columns
    columns = [c for c in columns if c != "version"] + ["version"]
    return pd.DataFrame([row.model_dump() for row in rows], columns=columns)


def write_rows(rows: List[ReportRow], out: Optional[str] = None) -> None:
    """Write rows as CSV with a header to a file, or to standard output."""
    frame = rows_to_frame(rows)
    target = out if out else sys.stdout
    frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
