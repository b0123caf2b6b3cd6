"""
Structured logging for experiment runs

Every line a command logs carries the run context bound with
``bind_run_context`` (command, output directory, config digest), so a line in
``<out>/run.log`` can be matched to the CSV rows sharing its ``config_digest``.
Timestamps appear here and nowhere in scientific outputs.
"""

import logging
import sys
import time
from pathlib import Path
from typing import Any, Dict, Optional

import structlog
from structlog.stdlib import LoggerFactory

from .exceptions import NestAttnException


def setup_logging(level: str = "INFO", format_type: str = "json", log_file: Optional[str] = None,
                  **run_context: Any) -> None:
    """
    Configure structlog over stdlib logging: stderr plus an optional run log

    Args:
        level: Logging level name
        format_type: ``json`` or ``text``
        log_file: Run log path
        run_context: Fields bound to every subsequent line (previous context is dropped)
    """
    renderer = (structlog.processors.JSONRenderer(sort_keys=True) if format_type == "json"
                else structlog.dev.ConsoleRenderer(colors=False))
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            renderer,
        ],
        context_class=dict,
        logger_factory=LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=False,
    )

    log_level = getattr(logging, level.upper(), logging.INFO)
    # stdout is reserved for command results
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(level=log_level, format="%(message)s", handlers=handlers, force=True)

    structlog.contextvars.clear_contextvars()
    bind_run_context(**run_context)


def bind_run_context(**fields: Any) -> None:
    """Attach fields (command, out, config_digest) to every later line of this run"""
    if fields:
        structlog.contextvars.bind_contextvars(**fields)


def get_logger(name: str = "nestattn") -> structlog.stdlib.BoundLogger:
    return structlog.get_logger(name)


class LoggerMixin:
    """Gives classes a ``self.logger`` named after the class"""

    @property
    def logger(self) -> structlog.stdlib.BoundLogger:
        return get_logger(f"{self.__class__.__module__}.{self.__class__.__name__}")


class PerformanceLogger:
    """Logs start, wall-clock seconds and failure of a training stage or sweep"""

    def __init__(self, operation: str, logger: Optional[structlog.stdlib.BoundLogger] = None, **context: Any):
        self.operation = operation
        self.logger = logger or get_logger("nestattn.performance")
        self.context = context
        self.started: Optional[float] = None

    def __enter__(self):
        self.started = time.perf_counter()
        self.logger.info("Operation started", operation=self.operation, **self.context)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        seconds = round(time.perf_counter() - self.started, 3)
        if exc_type is None:
            self.logger.info("Operation completed", operation=self.operation, seconds=seconds, **self.context)
        else:
            self.logger.error("Operation failed", operation=self.operation, seconds=seconds,
                              error_type=exc_type.__name__, error=str(exc_val), **self.context)


def log_error(error: Exception, context: Optional[Dict[str, Any]] = None,
              logger: Optional[structlog.stdlib.BoundLogger] = None) -> None:
    """Log a failed command; library errors contribute their code and details"""
    logger = logger or get_logger("nestattn.errors")
    if isinstance(error, NestAttnException):
        report = error.to_dict()
        fields = {"error": report["error"], "error_code": report["error_code"], **report["details"]}
    else:
        fields = {"error": str(error), "error_code": "UNKNOWN_ERROR", "error_type": type(error).__name__}
    logger.error("Command failed", **fields, **(context or {}))
