# Schemas package: scenario files and CSV report rows
from .scenario import (
    ScenarioFile, ModelSection, ObservationSection, SolverSection, WhittleSection, FleetSection, locate_key,
)
from .reports import (
    ReportRow, ThresholdRow, WhittleRow, SimulationRow, PeriodicRow, rows_to_frame, write_rows,
)

__all__ = [
    "ScenarioFile", "ModelSection", "ObservationSection", "SolverSection", "WhittleSection", "FleetSection",
    "locate_key",
    "ReportRow", "ThresholdRow", "WhittleRow", "SimulationRow", "PeriodicRow", "rows_to_frame", "write_rows",
]
