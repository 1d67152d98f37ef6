import logging
import sys
import time

from pythonjsonlogger.json import JsonFormatter

HUMAN_FORMAT = "%(message)s"
JSON_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def configure_logging(level: str = "INFO", json_logs: bool = False) -> None:
    """
    Route all pipeline logs to stderr.

    Args:
        level: logging level name
        json_logs: emit one JSON object per record instead of the emoji status lines
    """
    handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        handler.setFormatter(JsonFormatter(JSON_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(HUMAN_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level.upper())


def log_progress(logger: logging.Logger, done: int, total: int, start_time: float, what: str) -> None:
    """Log progress with ETA"""
    if total <= 0:
        return
    elapsed = time.time() - start_time
    eta = int((elapsed / max(done, 1)) * (total - done))
    logger.info(
        "📊 %s: %d/%d (%d%%) ⏳ ETA: %dm %ds",
        what, done, total, round(100 * done / total), eta // 60, eta % 60,
    )
