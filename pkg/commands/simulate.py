"""
simulate: fleet policy comparison on shared random streams.
"""
import argparse
from typing import List

from commands.common import add_common_arguments, continuation_cache, load_scenario
from core.exceptions import EXIT_OK, ScenarioParseError
from core.logging import cli_logger
from models.models import CostMode, PolicyId
from schemas.reports import SimulationRow, write_rows
from schemas.scenario import FleetSection
from services.fleet_service import build_fleet, scenario_rng, simulate_table


def _policy_list(text: str) -> List[PolicyId]:
    try:
        return [PolicyId(item.strip()) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("simulate", help="Fleet simulation against reference policies")
    add_common_arguments(parser)
    parser.add_argument("--policies", type=_policy_list, help="Comma list of policies to evaluate")
    parser.add_argument("--references", type=_policy_list, help="Comma list of reference policies")
    return parser


def default_pairs(cost_mode: CostMode):
    if cost_mode == CostMode.identical:
        return [PolicyId.full_whittle, PolicyId.partial_whittle], [PolicyId.full_optimal, PolicyId.slow_optimal]
    return [PolicyId.partial_whittle], [PolicyId.full_whittle, PolicyId.slow_whittle]


def run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args)
    if scenario.fleet is None:
        raise ScenarioParseError("simulate requires a [fleet] section", path=args.scenario)
    fleet: FleetSection = scenario.fleet
    seed = fleet.seed if args.seed is None else args.seed

    policies, references = default_pairs(fleet.cost_mode)
    policies = args.policies or policies
    references = args.references or references

    rng = scenario_rng(seed)
    snrs = scenario.fleet_snrs(rng, snr_db=args.snr)
    scenarios = [scenario.obs_scenario(snr_db=snr) for snr in snrs]
    if fleet.snr_mode == "uniform" and args.snr is None:
        label = f"[{fleet.snr_low:g},{fleet.snr_high:g}]"
    else:
        label = f"{snrs[0]:g}"

    fs = build_fleet(
        scenario.adr_model(),
        scenarios,
        crews=fleet.M,
        horizon=fleet.T,
        runs=fleet.runs,
        seed=seed,
        cost_mode=fleet.cost_mode,
        cost_high=fleet.cost_high,
        snr_label=label,
        policies=list(policies) + list(references),
        grid_points=scenario.solver.n,
        sample_count=scenario.solver.N,
        epsilon=scenario.whittle.epsilon,
        threads=args.threads,
        cache=continuation_cache(args),
        rng=rng,
    )
    reports = simulate_table(fs, policies, references, threads=args.threads)
    rows = [
        SimulationRow(
            snr=report.snr_label,
            policy=report.policy.policy.value,
            reference=report.reference.policy.value,
            err_percent=report.err_percent,
            stderr=report.err_stderr,
            runs=report.runs,
            policy_mean=report.policy.mean,
            reference_mean=report.reference.mean,
        )
        for report in reports
    ]
    cli_logger.info("simulate finished", pairs=len(rows), runs=fs.runs, snr=label)
    write_rows(rows, args.out)
    return EXIT_OK
