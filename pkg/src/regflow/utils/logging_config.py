"""
Logging configuration for regflow.

Diagnostics go to stderr. stdout is reserved for the human-readable
summaries printed by the CLI, so the two streams never interleave.
"""

import logging
import sys

PACKAGE_LOGGER = "regflow"


def setup_logging(level: int | str = logging.INFO) -> logging.Logger:
    """
    Configure the package logger to write to stderr.

    Calling this again replaces the handler instead of stacking a new one,
    so the CLI can re-apply the level once the config has been parsed.

    Args:
        level: Logging level as int or name (default: INFO)

    Returns:
        Configured logger instance
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO

    formatter = logging.Formatter(
        fmt="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    handler = logging.StreamHandler(stream=sys.stderr)
    handler.setFormatter(formatter)
    handler.setLevel(level)

    logger = logging.getLogger(PACKAGE_LOGGER)
    for old in list(logger.handlers):
        logger.removeHandler(old)
    logger.setLevel(level)
    logger.addHandler(handler)

    # Prevent propagation to root logger (avoids duplicate logs)
    logger.propagate = False

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get a child logger for a specific module.

    Args:
        name: Module name (e.g., "core.flow")

    Returns:
        Logger instance

    Example:
        logger = get_logger("core.flow")
        logger.info("Integrating with heun...")
    """
    return logging.getLogger(f"{PACKAGE_LOGGER}.{name}")
