import structlog
import logging
import sys
from app.config import Config


def setup_logging():
    """Configure structlog for JSON output on stderr (stdout carries results)"""
    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            structlog.processors.UnicodeDecoder(),
            structlog.processors.JSONRenderer()
        ],
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )

    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, Config.LOG_LEVEL.upper(), logging.WARNING),
    )

    return structlog.get_logger("fpphom")


logger = setup_logging()


def set_level(level: str):
    """Adjust the root level after startup (CLI --verbose)"""
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.WARNING))


def log_solver_event(command: str, solver: str, status: str,
                     start_ms: int, end_ms: int,
                     error: str = None, **fields):
    """Log structured solver execution event"""
    logger.info(
        "solver_execution",
        command=command,
        solver=solver,
        start_ms=start_ms,
        end_ms=end_ms,
        duration_ms=end_ms - start_ms,
        status=status,
        error=error,
        **fields
    )
