########################################
# dwcaps_engine/core/utils/logging_utils.py
########################################

import logging
from datetime import datetime
from pathlib import Path


def setup_logger(name="dwcaps_engine", level=logging.INFO, log_dir=None):
    """
    Configure the engine logger.

    - Logs to the console, and to a dated file when ``log_dir`` is given.
    - Readable format with timestamps and level in the file.
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    # Avoid duplicate handlers when reconfigured
    if not any(isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler)
               for h in logger.handlers):
        ch = logging.StreamHandler()
        ch.setFormatter(logging.Formatter("%(levelname)s | %(message)s"))
        logger.addHandler(ch)
    for h in logger.handlers:
        h.setLevel(level)

    if log_dir is not None:
        # one run, one file
        for h in [h for h in logger.handlers if isinstance(h, logging.FileHandler)]:
            logger.removeHandler(h)
            h.close()
        log_dir = Path(log_dir)
        log_dir.mkdir(exist_ok=True, parents=True)
        log_path = log_dir / f"{name}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        fh = logging.FileHandler(log_path, encoding="utf-8")
        fh.setLevel(level)
        fh.setFormatter(
            logging.Formatter("%(asctime)s | %(levelname)s | %(name)s | %(message)s")
        )
        logger.addHandler(fh)

    return logger
