"""
whittle: Whittle index table of one ADR on the belief grid.
"""
import argparse

from commands.common import add_common_arguments, continuation_cache, load_scenario
from core.exceptions import EXIT_OK
from core.logging import cli_logger
from models.models import BeliefGrid
from schemas.reports import WhittleRow, write_rows
from services.solver_service import continuation_for
from services.whittle_service import ThresholdProbeCache, build_whittle_table, sweep_whittle_table


def register(subparsers) -> argparse.ArgumentParser:
    parser = subparsers.add_parser("whittle", help="Whittle index per grid belief")
    add_common_arguments(parser)
    parser.add_argument("--sweep", action="store_true", help="Use the subsidy-grid sweep instead of bisection")
    return parser


def run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args)
    model = scenario.adr_model()
    scn = scenario.obs_scenario(snr_db=args.snr)
    seed = scenario.solver.seed if args.seed is None else args.seed

    cont = continuation_for(
        model, scn, BeliefGrid(n=scenario.solver.n), scenario.solver.N,
        seed=seed, cache=continuation_cache(args), threads=args.threads,
    )
    cache = ThresholdProbeCache(model, cont, method=scenario.solver.method)
    build = sweep_whittle_table if args.sweep else build_whittle_table
    table = build(model, cont, epsilon=scenario.whittle.epsilon, cache=cache)
    cli_logger.info("whittle finished", n=table.n, mu_bar=table.mu_bar, probes=len(cache))

    frame = table.to_frame()
    rows = [
        WhittleRow(k=int(r.k), belief=float(r.belief), index=float(r.index))
        for r in frame.itertuples(index=False)
    ]
    write_rows(rows, args.out)
    return EXIT_OK
