#!/usr/bin/env python3
"""
CPC-SNN Standardized Logging Utilities
Provides consistent logging configuration across services and experiment runs
"""

import functools
import logging
import os
import sys
import time
from typing import Optional
from pathlib import Path

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Module loggers that also write into the current run's log file
RUN_LOG_PACKAGES = ("cpcsnn", "backend", "services", "config", "utils")

class CPCSNNFormatter(logging.Formatter):
    """Custom formatter for CPC-SNN logs"""

    # Color codes for different log levels
    COLORS = {
        'DEBUG': '\033[36m',    # Cyan
        'INFO': '\033[32m',     # Green
        'WARNING': '\033[33m',  # Yellow
        'ERROR': '\033[31m',    # Red
        'CRITICAL': '\033[35m', # Magenta
    }
    RESET = '\033[0m'

    def format(self, record):
        # Colour a copy so file handlers sharing the record stay plain
        record = logging.makeLogRecord(record.__dict__)
        color = self.COLORS.get(record.levelname, '')
        record.levelname = f"{color}{record.levelname}{self.RESET}"
        return super().format(record)

def get_logger(name: str,
               level: str = "INFO",
               log_file: Optional[Path] = None,
               use_colors: bool = True) -> logging.Logger:
    """
    Get a configured logger for CPC-SNN modules

    Args:
        name: Logger name (usually __name__)
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional file to write logs to
        use_colors: Whether to use colored output

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, level.upper(), logging.INFO))

    # Avoid adding multiple console handlers
    if not any(getattr(h, '_cpcsnn_console', False) for h in logger.handlers):
        if use_colors and sys.stdout.isatty():
            formatter = CPCSNNFormatter(LOG_FORMAT)
        else:
            formatter = logging.Formatter(LOG_FORMAT)
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(formatter)
        console_handler._cpcsnn_console = True
        logger.addHandler(console_handler)
        logger.propagate = False

    # File handler (if specified and not attached yet)
    if log_file:
        log_file = Path(log_file)
        attached = {getattr(h, 'baseFilename', None) for h in logger.handlers}
        if os.path.abspath(log_file) not in attached:
            log_file.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_file)
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
            logger.addHandler(file_handler)

    return logger

def setup_run_logging(run_name: str,
                      log_dir: Path,
                      level: str = "INFO") -> logging.Logger:
    """
    Setup logging for one experiment run with file output

    Args:
        run_name: Name of the run (becomes the log file name)
        log_dir: Directory to store the log file
        level: Log level

    Returns:
        Configured logger
    """
    log_file = Path(log_dir) / f"{run_name}.log"
    run_logger = get_logger("cpcsnn", level, log_file)
    names = [n for n in logging.Logger.manager.loggerDict if n.split(".")[0] in RUN_LOG_PACKAGES]
    for name in ["cpcsnn"] + names:
        logger = logging.getLogger(name)
        # Only one run file at a time
        for handler in list(logger.handlers):
            if getattr(handler, '_cpcsnn_run', False) and handler.baseFilename != os.path.abspath(log_file):
                logger.removeHandler(handler)
                handler.close()
        if name != "cpcsnn":
            get_logger(name, level, log_file)
        for handler in logger.handlers:
            if isinstance(handler, logging.FileHandler):
                handler._cpcsnn_run = True
    return run_logger

class LogContext:
    """Context manager for adding context (seed, stage, ...) to log records"""

    def __init__(self, logger: logging.Logger, **context):
        self.logger = logger
        self.context = context
        self.old_factory = None

    def __enter__(self):
        self.old_factory = logging.getLogRecordFactory()
        old_factory = self.old_factory
        context = self.context

        def record_factory(*args, **kwargs):
            record = old_factory(*args, **kwargs)
            for key, value in context.items():
                setattr(record, key, value)
            return record

        logging.setLogRecordFactory(record_factory)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        logging.setLogRecordFactory(self.old_factory)

def log_execution_time(func):
    """Decorator to log function execution time"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        logger = logging.getLogger(func.__module__)
        start_time = time.time()

        try:
            result = func(*args, **kwargs)
            execution_time = time.time() - start_time
            logger.info(f"⏱️ {func.__name__} executed in {execution_time:.2f}s")
            return result
        except Exception as e:
            execution_time = time.time() - start_time
            logger.error(f"❌ {func.__name__} failed after {execution_time:.2f}s: {e}")
            raise

    return wrapper
