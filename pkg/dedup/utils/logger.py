"""
Logging utilities for the deduplication engine.
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Optional

from dedup.config.schema import LoggingConfig

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def setup_logging(config: Optional[LoggingConfig] = None, level: Optional[str] = None) -> None:
    """
    Set up the logging system based on configuration.

    Console output goes to stderr; stdout carries JSON results.

    Args:
        config: Logging configuration
        level: Level name overriding ``config.level``
    """
    config = config or LoggingConfig()
    log_level = getattr(logging, (level or config.level).upper())

    handlers = [logging.StreamHandler(sys.stderr)]
    if config.file:
        Path(config.file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(RotatingFileHandler(
            config.file,
            maxBytes=config.max_size_mb * 1024 * 1024,
            backupCount=config.backup_count,
            encoding="utf-8",
        ))

    logging.basicConfig(level=log_level, format=LOG_FORMAT, handlers=handlers, force=True)
    logging.getLogger(__name__).debug(f"Logging initialized at level {logging.getLevelName(log_level)}")


def log_event(message: str, level: int = logging.INFO, logger_name: str = "dedup.events", **kwargs: Any) -> None:
    """
    Log an engine event with key=value context.

    Args:
        message: Log message
        level: Logging level
        logger_name: Logger to emit on
        **kwargs: Additional fields to log
    """
    logger = logging.getLogger(logger_name)
    if kwargs:
        fields = " ".join(f"{k}={v}" for k, v in kwargs.items())
        message = f"{message} {fields}"
    logger.log(level, message)
