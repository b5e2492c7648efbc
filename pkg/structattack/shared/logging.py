# The MIT License (MIT)
# Copyright © 2024 structattack contributors

import os
import sys
import datetime
from loguru import logger

EVENTS_LEVEL = "EVENTS"


def ensure_events_level():
    try:
        logger.level(EVENTS_LEVEL)
    except ValueError:
        logger.level(EVENTS_LEVEL, no=38, icon="📝")


def set_console_level(debug: bool = False, trace: bool = False):
    level = "TRACE" if trace else "DEBUG" if debug else "INFO"
    logger.remove()
    logger.add(sys.stderr, level=level)


def setup_logging(config, full_path: str) -> str:
    """
    Adds serialized file sinks under `<full_path>/logs/<timestamp>/`.

    Returns the log directory. The EVENTS sink receives one record per
    training iteration.
    """
    ensure_events_level()
    set_console_level(
        debug=config.logging.get("debug", False),
        trace=config.logging.get("trace", False),
    )

    timestamp = datetime.datetime.now().strftime("%Y%m%d_%H%M%S")
    log_path = os.path.join(os.path.expanduser(full_path), "logs", timestamp)
    os.makedirs(log_path, exist_ok=True)

    if config.logging.get("dont_save_events", False):
        return log_path

    levels = [EVENTS_LEVEL, "INFO"]
    if config.logging.get("debug", False):
        levels.append("DEBUG")
    if config.logging.get("trace", False):
        levels.append("TRACE")

    for level in levels:
        logger.add(
            os.path.join(log_path, f"{level}.log"),
            rotation=config.logging.get("retention_size", "2 GB"),
            serialize=True,
            enqueue=True,
            backtrace=False,
            diagnose=False,
            level=level,
            format="{time:YYYY-MM-DD at HH:mm:ss} | {level} | {message}",
        )

    logger.info(f"Logging to {log_path}")
    return log_path


def add_args(parser):
    parser.add_argument(
        "--logging.debug", action="store_true", default=False, help="Turn on debug logging."
    )
    parser.add_argument(
        "--logging.trace", action="store_true", default=False, help="Turn on trace logging."
    )
    parser.add_argument(
        "--logging.dont_save_events",
        action="store_true",
        default=False,
        help="If set, no log files are written.",
    )
    parser.add_argument(
        "--logging.retention_size",
        type=str,
        default="2 GB",
        help="Rotation size for log files.",
    )
