"""
Centralized logging for the toolkit.

One process-wide manager owns the handlers. Console records go to standard
error so CSV written to standard output is never interleaved with progress
lines; optional per-component files rotate by size and are gzipped on
rotation.
"""
import gzip
import logging
import logging.handlers
import os
import shutil
import sys
import threading
from functools import partialmethod
from pathlib import Path
from typing import Any, Dict, List, Optional

import structlog
from pythonjsonlogger import jsonlogger

from core.config import settings

# component file -> stdlib logger names routed into it
COMPONENT_FILES: Dict[str, List[str]] = {
    "solver_log_file": ["solver", "inference"],
    "whittle_log_file": ["whittle"],
    "fleet_log_file": ["fleet"],
}

TEXT_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
FILE_FORMAT = "%(asctime)s - %(levelname)s - [%(component)s] - %(message)s"
JSON_FORMAT = "%(asctime)s %(levelname)s %(component)s %(message)s"


def _level() -> int:
    return getattr(logging, settings.log_level.upper(), logging.INFO)


class ComponentFilter(logging.Filter):
    """Tag records with the top-level logger name unless a component is set."""

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "component"):
            record.component = record.name.split(".", 1)[0] or "root"
        return True


def _gzip_rotator(source: str, dest: str) -> None:
    try:
        with open(source, "rb") as f_in, gzip.open(dest, "wb") as f_out:
            shutil.copyfileobj(f_in, f_out)
        os.remove(source)
    except OSError as e:
        # keep the uncompressed file rather than lose records
        print(f"Warning: could not compress {source}: {e}", file=sys.stderr)
        os.replace(source, dest[:-3])


def _formatter(with_component: bool) -> logging.Formatter:
    if settings.log_format == "json":
        return jsonlogger.JsonFormatter(fmt=JSON_FORMAT, datefmt="%Y-%m-%dT%H:%M:%S")
    return logging.Formatter(FILE_FORMAT if with_component else TEXT_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")


def rotating_file_handler(path: Path, level: int = logging.INFO) -> logging.Handler:
    """Size-rotating handler; rotated files become ``name.N.gz`` when compression is on."""
    handler = logging.handlers.RotatingFileHandler(
        filename=str(path),
        maxBytes=settings.log_file_max_size_mb * 1024 * 1024,
        backupCount=settings.log_file_backup_count,
    )
    if settings.log_compression:
        handler.namer = lambda name: f"{name}.gz"
        handler.rotator = _gzip_rotator
    handler.setLevel(level)
    handler.addFilter(ComponentFilter())
    handler.setFormatter(_formatter(with_component=True))
    return handler


class StructuredLogger:
    """
    Component logger taking keyword fields.

    Text output appends ``[k=v, ...]`` to the message; JSON output puts the
    fields on the record so the formatter emits them as keys.
    """

    def __init__(self, name: str, logger: logging.Logger):
        self.name = name
        self._logger = logger

    def _log(self, level: int, msg: str, *args: Any, exc_info: bool = False, **fields: Any) -> None:
        if not self._logger.isEnabledFor(level):
            return
        extra = {"component": self.name}
        if settings.log_format == "json":
            extra.update(fields)
        elif fields:
            msg = f"{msg} [{', '.join(f'{k}={v}' for k, v in fields.items())}]"
        self._logger.log(level, msg, *args, exc_info=exc_info, extra=extra)

    debug = partialmethod(_log, logging.DEBUG)
    info = partialmethod(_log, logging.INFO)
    warning = partialmethod(_log, logging.WARNING)
    error = partialmethod(_log, logging.ERROR)

    def exception(self, msg: str, *args: Any, **fields: Any) -> None:
        self._log(logging.ERROR, msg, *args, exc_info=True, **fields)


class CentralizedLogManager:
    """Process-wide singleton owning the console and file handlers."""

    _instance: Optional["CentralizedLogManager"] = None
    _lock = threading.Lock()

    def __new__(cls):
        with cls._lock:
            if cls._instance is None:
                instance = super().__new__(cls)
                instance._configure()
                cls._instance = instance
        return cls._instance

    def _configure(self) -> None:
        self._loggers: Dict[str, StructuredLogger] = {}
        self._handlers: List[logging.Handler] = []

        root = logging.getLogger()
        root.handlers.clear()
        root.setLevel(_level())

        console = logging.StreamHandler(sys.stderr)
        console.setLevel(_level())
        console.addFilter(ComponentFilter())
        console.setFormatter(_formatter(with_component=False))
        self._attach(root, console)

        # structlog records (command error reports) share the stdlib handlers
        structlog.configure(
            processors=[
                structlog.stdlib.add_log_level,
                structlog.processors.JSONRenderer()
                if settings.log_format == "json"
                else structlog.processors.KeyValueRenderer(key_order=["event"]),
            ],
            logger_factory=structlog.stdlib.LoggerFactory(),
            wrapper_class=structlog.stdlib.BoundLogger,
            cache_logger_on_first_use=True,
        )

        if settings.enable_file_logging:
            self._configure_files(root)

    def _configure_files(self, root: logging.Logger) -> None:
        directory = Path(settings.log_directory)
        directory.mkdir(parents=True, exist_ok=True)
        self._attach(root, rotating_file_handler(directory / settings.app_log_file))
        self._attach(root, rotating_file_handler(directory / settings.error_log_file, logging.ERROR))
        # component records also propagate to the root handlers
        for setting_name, logger_names in COMPONENT_FILES.items():
            handler = rotating_file_handler(directory / getattr(settings, setting_name))
            for name in logger_names:
                self._attach(logging.getLogger(name), handler)

    def _attach(self, logger: logging.Logger, handler: logging.Handler) -> None:
        logger.addHandler(handler)
        if handler not in self._handlers:
            self._handlers.append(handler)

    def get_logger(self, name: str) -> StructuredLogger:
        if name not in self._loggers:
            self._loggers[name] = StructuredLogger(name, logging.getLogger(name))
        return self._loggers[name]

    def shutdown(self) -> None:
        """Close and detach every handler; the next setup_logging() starts fresh."""
        for handler in self._handlers:
            for logger in [logging.getLogger()] + [logging.getLogger(n) for names in COMPONENT_FILES.values() for n in names]:
                logger.removeHandler(handler)
            try:
                handler.close()
            except OSError as e:
                print(f"Error closing log handler: {e}", file=sys.stderr)
        self._handlers.clear()
        self._loggers.clear()
        with CentralizedLogManager._lock:
            CentralizedLogManager._instance = None


def setup_logging() -> CentralizedLogManager:
    return CentralizedLogManager()


def get_logger(name: str) -> StructuredLogger:
    """Structured logger for a component, setting logging up on first use."""
    return setup_logging().get_logger(name)


def shutdown_logging() -> None:
    if CentralizedLogManager._instance is not None:
        CentralizedLogManager._instance.shutdown()


# Component loggers used across the services and commands
cli_logger = get_logger("cli")
solver_logger = get_logger("solver")
inference_logger = get_logger("inference")
whittle_logger = get_logger("whittle")
fleet_logger = get_logger("fleet")
