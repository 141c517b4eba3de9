"""
Logging for tiling-predictor.

structlog renders events and hands them to standard logging; handlers write
to stderr (Rich) and optionally a file, so stdout stays free for command
output.
"""

import contextlib
import logging
import os
from typing import Any, Iterator, Optional

import structlog
from rich.console import Console
from rich.logging import RichHandler

from tiling_predictor.utils.config import settings

_configured = False

# Third-party loggers that are chatty at DEBUG
_QUIET_LOGGERS = ("PIL",)


def _renderer():
    if settings.STRUCTURED_LOGGING:
        return structlog.processors.JSONRenderer()
    return structlog.dev.ConsoleRenderer()


def _console_handler(level: int) -> logging.Handler:
    handler = RichHandler(rich_tracebacks=True, console=Console(stderr=True), show_path=False)
    handler.setLevel(level)
    return handler


def _file_handler(path: str, level: int) -> logging.Handler:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    handler = logging.FileHandler(path)
    handler.setLevel(level)
    if settings.STRUCTURED_LOGGING:
        fmt = '{"timestamp":"%(asctime)s", "level":"%(levelname)s", "message":"%(message)s"}'
    else:
        fmt = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    handler.setFormatter(logging.Formatter(fmt))
    return handler


def configure_logging(level: Optional[str] = None) -> None:
    """
    Configure structlog and the standard logging handlers.

    Args:
        level: Log level name overriding ``settings.LOG_LEVEL``.
    """
    global _configured
    log_level = getattr(logging, (level or settings.LOG_LEVEL).upper())

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.dev.set_exc_info,
            structlog.processors.TimeStamper(fmt="iso"),
            _renderer(),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(log_level),
        # stdlib factory so records reach whatever stderr is current (CliRunner swaps it)
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )

    handlers = [_console_handler(log_level)]
    if settings.LOG_FILE:
        handlers.append(_file_handler(settings.LOG_FILE, log_level))
    logging.basicConfig(level=log_level, format="%(message)s", datefmt="[%X]", handlers=handlers, force=True)
    for name in _QUIET_LOGGERS:
        logging.getLogger(name).setLevel(max(log_level, logging.INFO))
    _configured = True


def get_logger(name: Optional[str] = None) -> structlog.typing.FilteringBoundLogger:
    """
    Get a structured logger

    Args:
        name: Optional logger name

    Returns:
        A structured logger
    """
    if not _configured:
        configure_logging()
    return structlog.get_logger(name)


@contextlib.contextmanager
def log_context(**values: Any) -> Iterator[None]:
    """Bind ``values`` to every event logged inside the block (e.g. ``command="train"``)."""
    with structlog.contextvars.bound_contextvars(**values):
        yield
