"""
periodic: value U(q) of repairing every q events, and its maximizer.
"""
import argparse

from commands.common import default_scenario, load_scenario
from core.config import settings
from core.exceptions import EXIT_OK
from core.logging import cli_logger
from schemas.reports import PeriodicRow, write_rows
from services.fleet_service import best_periodic_interval, periodic_value


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("periodic", help="Periodic-review value curve")
    parser.add_argument("--scenario", help="Scenario TOML file (only [model] is used)")
    parser.add_argument("--out", help="CSV output path (default: standard output)")
    parser.add_argument("--qmax", type=int, default=200, help="Largest review interval")
    parser.add_argument("--seed", type=int, help="Accepted for uniformity; the curve is deterministic")
    return parser


def run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args, required=False) or default_scenario()
    model = scenario.adr_model()
    q_best, u_best = best_periodic_interval(model, args.qmax)
    cli_logger.info("periodic finished", q_star=q_best, value=round(u_best, 4), version=settings.app_version)
    rows = [PeriodicRow(q=q, U=periodic_value(model, q), optimal=(q == q_best)) for q in range(1, args.qmax + 1)]
    write_rows(rows, args.out)
    return EXIT_OK
