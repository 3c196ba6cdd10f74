import logging
import os

from dwcaps_engine.core.utils.errors import UsageError

logger = logging.getLogger(__name__)

THREADS_ENV = "DWCAPS_THREADS"


def get_num_threads():
    """Worker threads allowed by ``DWCAPS_THREADS`` (default 1, values below 1 clamp to 1)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}.")
    if value < 1:
        logger.warning("%s=%s is below 1, using 1 thread.", THREADS_ENV, raw)
        return 1
    return value
