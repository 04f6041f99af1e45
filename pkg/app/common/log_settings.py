import logging
import sys

import structlog

# --- Глобальные параметры логирования ---
DEFAULT_LEVEL = logging.WARNING
VERBOSE_LEVEL = logging.DEBUG


def _stderr_logger(*args) -> structlog.PrintLogger:
    # stderr is resolved per logger, never captured at configure time
    return structlog.PrintLogger(sys.stderr)


def set_log_def_params(level: int = DEFAULT_LEVEL) -> None:
    """
    Устанавливает глобальные параметры structlog
    для всех модулей проекта.

    Logs go to stderr: stdout is reserved for command output.
    """
    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=_stderr_logger,
        cache_logger_on_first_use=False,
    )
