# -*- coding: utf-8 -*-
"""
Logging Configuration Utility

Sets up a file handler and a standard-error stream handler for entry
points. Standard output is left for requested results (tables, CSV).
Library modules only call logging.getLogger(__name__).
"""

import logging
import sys
from pathlib import Path
from typing import Optional


def setup_logging(
    script_name: str,
    log_dir: Optional[Path] = None,
    level: int = logging.INFO,
    log_format: str = '%(asctime)s - %(levelname)s - [%(name)s:%(funcName)s] %(message)s',
    date_format: str = '%Y-%m-%d %H:%M:%S'
) -> logging.Logger:
    """
    Sets up logging for an entry point.

    Handlers go on the root logger so messages from every module logger
    reach them; the returned logger is the script's own.

    Args:
        script_name: Name of the entry point (logger name and log file name).
        log_dir: Directory for `<script_name>.log`; None disables the file handler.
        level: The logging level (e.g., logging.INFO, logging.DEBUG).
        log_format: The format string for log messages.
        date_format: The format string for the date/time in log messages.

    Returns:
        The configured logger for `script_name`.
    """
    root = logging.getLogger()
    root.setLevel(level)
    # Prevent adding handlers multiple times if function is called again
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(fmt=log_format, datefmt=date_format)

    if log_dir is not None:
        log_file_path = Path(log_dir) / f"{script_name}.log"
        try:
            Path(log_dir).mkdir(parents=True, exist_ok=True)
            fh = logging.FileHandler(log_file_path, encoding='utf-8')
            fh.setFormatter(formatter)
            root.addHandler(fh)
        except OSError as e:
            print(f"Warning: Could not set up file handler for {log_file_path}: {e}", file=sys.stderr)

    sh = logging.StreamHandler(sys.stderr)
    sh.setFormatter(formatter)
    root.addHandler(sh)

    logger = logging.getLogger(script_name)
    logger.setLevel(level)
    logger.debug(f"Logging configured for '{script_name}' (log dir: {log_dir})")
    return logger
