"""
Logging Framework for the Simulator-in-the-Loop Estimator
"""

import logging
import os
from datetime import datetime
from typing import Optional, Dict, Any
from colorama import Fore, Style, init

# Initialize colorama for Windows support
init()

ROOT_LOGGER = "sil"
LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


class ColoredFormatter(logging.Formatter):
    """Custom formatter with colors for console output"""

    COLORS = {
        'DEBUG': Fore.CYAN,
        'INFO': Fore.GREEN,
        'WARNING': Fore.YELLOW,
        'ERROR': Fore.RED,
        'CRITICAL': Fore.RED + Style.BRIGHT,
    }

    def format(self, record):
        # Work on a copy so the file handler keeps the plain level name
        record = logging.makeLogRecord(record.__dict__)
        color = self.COLORS.get(record.levelname, '')
        record.levelname = f"{color}{record.levelname}{Style.RESET_ALL}"
        return super().format(record)


class PipelineLogger:
    """
    Logging utility for the estimation pipeline.
    Provides structured logging for stages, tuning iterations and metrics.
    """

    def __init__(self, name: str = ROOT_LOGGER, log_file: Optional[str] = None,
                 level: Optional[str] = "INFO", attach_handlers: bool = True):
        """
        Initialize the pipeline logger.

        Args:
            name: Logger name
            log_file: Path to log file (optional)
            level: Logging level (DEBUG, INFO, WARNING, ERROR); None inherits
            attach_handlers: Install console/file handlers on this logger.
                Module loggers leave this off and propagate to the root logger.
        """
        self.logger = logging.getLogger(name)
        if level:
            self.logger.setLevel(getattr(logging, level.upper()))

        if not attach_handlers:
            return

        self.logger.handlers = []  # Clear existing handlers
        self.logger.propagate = False

        # Console handler with colors
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(ColoredFormatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        self.logger.addHandler(console_handler)

        # File handler (no colors)
        if log_file:
            log_dir = os.path.dirname(log_file)
            if log_dir:
                os.makedirs(log_dir, exist_ok=True)
            file_handler = logging.FileHandler(log_file, encoding='utf-8')
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
            self.logger.addHandler(file_handler)

    def info(self, message: str):
        """Log info message"""
        self.logger.info(message)

    def debug(self, message: str):
        """Log debug message"""
        self.logger.debug(message)

    def warning(self, message: str):
        """Log warning message"""
        self.logger.warning(message)

    def error(self, message: str):
        """Log error message"""
        self.logger.error(message)

    def is_debug(self) -> bool:
        return self.logger.isEnabledFor(logging.DEBUG)

    def log_stage_start(self, name: str):
        """Log the start of a pipeline stage"""
        separator = "=" * 60
        self.logger.info(separator)
        self.logger.info(f"{name.upper()} - STARTED")
        self.logger.info(f"Time: {datetime.now().strftime(DATE_FORMAT)}")
        self.logger.info(separator)

    def log_stage_end(self, name: str, stats: Optional[Dict[str, Any]] = None):
        """Log the end of a pipeline stage with statistics"""
        separator = "=" * 60
        self.logger.info(separator)
        self.logger.info(f"{name.upper()} - COMPLETED")
        if stats:
            self.logger.info("Statistics:")
            for key, value in stats.items():
                self.logger.info(f"  • {key}: {value}")
        self.logger.info(separator)

    def log_iteration(self, iteration: int, total: int, cost: float,
                      incumbent: float, diverged: bool = False):
        """Log one tuning iteration"""
        msg = f"[Iter {iteration}/{total}] J: {cost:.6g} | Best: {incumbent:.6g}"
        if diverged:
            msg += " | DIVERGED (penalty)"
        self.logger.debug(msg)

    def log_error_with_context(self, stage: str, error: str,
                               context: Optional[Dict[str, Any]] = None):
        """Log error with additional context"""
        self.logger.error(f"{stage} error: {error}")
        if context:
            self.logger.error(f"Context: {context}")

    def log_checkpoint(self, checkpoint_path: str, rows: int):
        """Log checkpoint save"""
        self.logger.info(f"💾 Checkpoint saved: {checkpoint_path} ({rows} rows)")

    def log_metric(self, name: str, value: Any):
        """Log a single metric"""
        self.logger.info(f"📊 {name}: {value}")


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> PipelineLogger:
    """Install console/file handlers on the package root logger"""
    return PipelineLogger(name=ROOT_LOGGER, log_file=log_file, level=level)


def get_logger(name: str) -> PipelineLogger:
    """Get a module logger that propagates to the package root logger"""
    return PipelineLogger(name=f"{ROOT_LOGGER}.{name}", level=None, attach_handlers=False)
