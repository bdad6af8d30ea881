"""
Domain exceptions and the command-line exception handler.
"""
import traceback
from typing import Optional, Tuple
import structlog

logger = structlog.get_logger("exceptions")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_PARSE_FAILURE = 2
EXIT_SOLVER_FAILURE = 3


class AdrError(Exception):
    """Base exception class for the toolkit."""

    def __init__(self, detail: str = "Internal error", exit_code: int = EXIT_SOLVER_FAILURE):
        super().__init__(detail)
        self.detail = detail
        self.exit_code = exit_code


class ModelValidationError(AdrError):
    """Model or scenario parameters violate an invariant."""

    def __init__(self, detail: str = "Invalid model parameters"):
        super().__init__(detail=detail)


class ImpossibleObservationError(AdrError):
    """Both likelihoods vanish, so the Bayes denominator is zero."""

    def __init__(self, detail: str = "Observation has zero probability under both ADR states"):
        super().__init__(detail=detail)


class DimensionMismatchError(AdrError):
    """A QMC point or reading vector has the wrong length."""

    def __init__(self, expected: int, actual: int, what: str = "point"):
        super().__init__(detail=f"{what} dimension mismatch: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class MissingPosteriorError(AdrError):
    """A case B/C/D likelihood was requested without a posterior."""

    def __init__(self, case: str):
        super().__init__(detail=f"case {case} likelihood requires a variational posterior")
        self.case = case


class NumericalError(AdrError):
    """A non-finite intermediate appeared during inference."""

    def __init__(self, detail: str = "Non-finite intermediate value"):
        super().__init__(detail=detail)


class ConvergenceError(AdrError):
    """Value iteration hit its iteration cap."""

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            detail=f"value iteration did not converge in {iterations} iterations (residual {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


class SubsidyBoundError(AdrError):
    """The doubling search for an upper subsidy bound exceeded its cap."""

    def __init__(self, cap: float):
        super().__init__(detail=f"no subsidy up to {cap:.6g} makes passive optimal everywhere")
        self.cap = cap


class NonMonotoneThresholdError(AdrError):
    """Threshold increased with subsidy by more than the clipping allowance."""

    def __init__(self, low_probe: Tuple[float, int], high_probe: Tuple[float, int]):
        super().__init__(
            detail=(
                f"threshold not non-increasing in subsidy: mu={low_probe[0]:.6g} -> k={low_probe[1]}, "
                f"mu={high_probe[0]:.6g} -> k={high_probe[1]}"
            )
        )
        self.low_probe = low_probe
        self.high_probe = high_probe


class MissingWhittleTableError(AdrError):
    """An index policy was requested for an ADR without a Whittle table."""

    def __init__(self, adr_id: int):
        super().__init__(detail=f"ADR {adr_id} has no Whittle table")
        self.adr_id = adr_id


class SeedConflictError(AdrError):
    """Two streams were requested with the same seed key."""

    def __init__(self, detail: str = "Seed reuse conflict"):
        super().__init__(detail=detail)


class CacheMismatchError(AdrError):
    """A cached continuation table does not have the requested shape."""

    def __init__(self, path: str, detail: str):
        super().__init__(detail=f"continuation cache {path}: {detail}; delete it or run with --no-cache")
        self.path = path


class ScenarioParseError(AdrError):
    """Scenario file could not be parsed or validated."""

    def __init__(self, detail: str, line: Optional[int] = None, path: Optional[str] = None):
        location = f"{path or '<scenario>'}:{line}" if line is not None else (path or "<scenario>")
        super().__init__(detail=f"{location}: {detail}", exit_code=EXIT_PARSE_FAILURE)
        self.line = line
        self.path = path


class SolverFailure(AdrError):
    """Wraps any downstream failure surfaced by a command."""

    def __init__(self, detail: str = "Solver failure"):
        super().__init__(detail=detail, exit_code=EXIT_SOLVER_FAILURE)


def handle_cli_exception(exc: BaseException, command: str) -> int:
    """Log an exception raised by a command and return the exit status."""
    if isinstance(exc, AdrError):
        logger.error(
            "Command failed",
            command=command,
            exception_type=type(exc).__name__,
            detail=exc.detail,
            exit_code=exc.exit_code,
        )
        return exc.exit_code

    logger.error(
        "Unhandled exception occurred",
        command=command,
        exception_type=type(exc).__name__,
        error_detail=str(exc),
        traceback=traceback.format_exc(),
    )
    return EXIT_UNEXPECTED
