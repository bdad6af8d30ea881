"""
Helpers shared by the subcommands: scenario loading with overrides and
cache selection.
"""
import argparse
from typing import Optional

from core.config import settings
from core.exceptions import ScenarioParseError
from models.models import ObservationCase
from schemas.scenario import ObservationSection, ScenarioFile
from services.solver_service import ContinuationCache


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", help="Scenario TOML file (default: DEFAULT_SCENARIO)")
    parser.add_argument("--out", help="CSV output path (default: standard output)")
    parser.add_argument("--seed", type=int, help="Override the scenario seed")
    parser.add_argument("--threads", type=int, default=settings.default_threads, help="Worker threads")
    parser.add_argument("--no-cache", action="store_true", help="Rebuild continuation tables")
    parser.add_argument("--method", choices=["vi", "lp"], help="Bellman solver")
    parser.add_argument("--case", choices=["A", "B", "C", "D"], help="Override the observation case")
    parser.add_argument("--snr", type=float, help="Override the SNR in dB")


def load_scenario(args: argparse.Namespace, required: bool = True) -> Optional[ScenarioFile]:
    path = args.scenario or settings.default_scenario
    if path:
        scenario = ScenarioFile.load(path)
    elif required:
        raise ScenarioParseError("no scenario given (--scenario or DEFAULT_SCENARIO)")
    else:
        return None

    updates = {}
    if getattr(args, "method", None):
        updates["solver"] = scenario.solver.model_copy(update={"method": args.method})
    if getattr(args, "case", None):
        obs = scenario.observation.model_copy(update={"case": ObservationCase(args.case)})
        updates["observation"] = obs
    if updates:
        scenario = scenario.model_copy(update=updates)
    return scenario


def default_scenario() -> ScenarioFile:
    return ScenarioFile(observation=ObservationSection(snr_db=0.0))


def continuation_cache(args: argparse.Namespace) -> ContinuationCache:
    return ContinuationCache(enabled=settings.enable_cache and not args.no_cache)
