import logging
from typing import Optional

from core.config import settings


class AppLogger:
    """
    Wraps Python's logging to create module-specific loggers
    with console output and an optional mirror file.
    """
    def __init__(self, name: str, level: Optional[str] = None, log_file: Optional[str] = None):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(level or settings.LOG_LEVEL)
        # Remove all handlers
        self.logger.handlers = []
        formatter = logging.Formatter(
            '[%(asctime)s] %(levelname)s in %(module)s: %(message)s'
        )
        handler = logging.StreamHandler()
        handler.setFormatter(formatter)
        self.logger.addHandler(handler)

        log_file = log_file or settings.LOG_FILE
        if log_file:
            file_handler = logging.FileHandler(log_file, encoding="utf-8")
            file_handler.setFormatter(formatter)
            self.logger.addHandler(file_handler)

    def get_logger(self):
        return self.logger
