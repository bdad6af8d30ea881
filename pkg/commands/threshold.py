"""
threshold: build, solve and report the single-ADR threshold policy.
"""
import argparse

from commands.common import add_common_arguments, continuation_cache, load_scenario
from core.exceptions import EXIT_OK
from core.logging import cli_logger
from schemas.reports import ThresholdRow, write_rows
from services.fleet_service import best_periodic_interval, pomdp_improvement
from services.solver_service import solve_scenario


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("threshold", help="Optimal repair threshold b* and value of one ADR")
    add_common_arguments(parser)
    parser.add_argument("--timing", action="store_true", help="Write wall_seconds into the CSV")
    return parser


def run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args)
    model = scenario.adr_model()
    scn = scenario.obs_scenario(snr_db=args.snr)
    seed = scenario.solver.seed if args.seed is None else args.seed

    result = solve_scenario(
        model,
        scn,
        n=scenario.solver.n,
        sample_count=scenario.solver.N,
        method=scenario.solver.method,
        seed=seed,
        cache=continuation_cache(args),
        threads=args.threads,
        tol=scenario.solver.tol,
    )
    _, periodic_best = best_periodic_interval(model)
    cli_logger.info(
        "threshold finished", case=scn.case.value, b_star=result.b_star, seconds=round(result.wall_seconds, 3)
    )

    row = ThresholdRow(
        n=result.n,
        N=result.sample_count,
        case=result.case.value,
        b_star=result.b_star,
        V_at_1=result.value_at_one,
        V_at_0=result.value_at_zero,
        periodic_improvement_percent=pomdp_improvement(result.value_at_zero, periodic_best),
        wall_seconds=result.wall_seconds if args.timing else None,
    )
    write_rows([row], args.out)
    return EXIT_OK
