# Subcommand handlers; each exposes register(subparsers) and run(args) -> int
from . import periodic, simulate, threshold, whittle

COMMANDS = {
    "threshold": threshold,
    "whittle": whittle,
    "simulate": simulate,
    "periodic": periodic,
}
