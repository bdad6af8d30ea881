"""
Command-line entry point.

    python main.py threshold --scenario scenarios/case_a.toml
    python main.py whittle   --scenario scenarios/case_a.toml --out whittle.csv
    python main.py simulate  --scenario scenarios/fleet_identical.toml --threads 4
    python main.py periodic  --qmax 200
"""
import argparse
import sys
from typing import List, Optional

# Import logging system first
from core.logging import setup_logging, get_logger, shutdown_logging

# Setup logging early
setup_logging()
logger = get_logger("main")

from commands import COMMANDS
from core.config import settings
from core.exceptions import handle_cli_exception


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adr-maintenance",
        description=f"{settings.app_name} {settings.app_version}: repair scheduling for demand-response devices",
    )
    parser.add_argument("--version", action="version", version=settings.app_version)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in COMMANDS.values():
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    logger.debug("Running command", command=args.command)
    try:
        return COMMANDS[args.command].run(args)
    except Exception as exc:  # mapped to exit codes
        return handle_cli_exception(exc, args.command)
    finally:
        shutdown_logging()


if __name__ == "__main__":
    sys.exit(main())
