"""
Logging setup: coloured console output for terminals and an optional
rotating log file for long training runs.
"""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional, TextIO

RESET = "\033[0m"
BOLD = "\033[1m"

LEVEL_COLORS = {
    "DEBUG": "\033[90m",
    "INFO": "\033[96m",
    "WARNING": "\033[93m",
    "ERROR": "\033[91m",
    "CRITICAL": "\033[91m" + BOLD,
}
NAME_COLOR = "\033[94m"

DETAILED_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"
SHORT_FORMAT = "[%(levelname)s] [%(name)s] %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class ColoredFormatter(logging.Formatter):
    """Console formatter; colours only when the stream is a terminal."""

    def __init__(self, use_color: bool = True, detailed: bool = False, stream: Optional[TextIO] = None):
        stream = stream or sys.stderr
        self.use_color = use_color and hasattr(stream, "isatty") and stream.isatty()
        self.detailed = detailed
        super().__init__(fmt=DETAILED_FORMAT if detailed else SHORT_FORMAT, datefmt=DATE_FORMAT)

    def format(self, record: logging.LogRecord) -> str:
        record = logging.makeLogRecord(record.__dict__)
        # hexresnet.trainer -> trainer
        name = record.name if self.detailed else record.name.rsplit(".", 1)[-1]
        if self.use_color:
            record.levelname = f"{LEVEL_COLORS.get(record.levelname, RESET)}{record.levelname}{RESET}"
            name = f"{NAME_COLOR}{name}{RESET}"
        record.name = name
        return super().format(record)


def setup_logging(
    log_level: str = "INFO",
    log_file: Optional[str] = None,
    detailed: bool = False,
    use_color: bool = True,
) -> None:
    """
    Configure the root logger.

    Args:
        log_level: DEBUG, INFO, WARNING, ERROR or CRITICAL
        log_file: also write full-detail records to this file (rotated at 10MB)
        detailed: timestamps and call sites on the console
        use_color: ANSI colours on the console
    """
    numeric_level = getattr(logging, log_level.upper(), logging.INFO)

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)
    root_logger.handlers.clear()

    # stdout carries command results; log lines go to stderr
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(numeric_level)
    console_handler.setFormatter(ColoredFormatter(use_color=use_color, detailed=detailed, stream=sys.stderr))
    root_logger.addHandler(console_handler)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = RotatingFileHandler(log_file, maxBytes=10 * 1024 * 1024, backupCount=5, encoding="utf-8")
        file_handler.setLevel(numeric_level)
        file_handler.setFormatter(logging.Formatter(DETAILED_FORMAT, datefmt=DATE_FORMAT))
        root_logger.addHandler(file_handler)
