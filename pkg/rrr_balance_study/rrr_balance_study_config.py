# pylint: disable=wrong-import-position
"""
Various settings and utility functions for the rrr_balance_study project.
"""
import logging
import os

from dotenv import load_dotenv

load_dotenv()

LOG_LEVEL = os.getenv("RRR_LOG_LEVEL", "INFO").upper()
THREADS = int(os.getenv("RRR_THREADS", str(os.cpu_count() or 1)))

SINGULARITY_THRESHOLD = float(os.getenv("RRR_SINGULARITY_THRESHOLD", "1e8"))
TORQUE_GUARD = float(os.getenv("RRR_TORQUE_GUARD", "1e-9"))

RANDOM_SEED = int(os.getenv("RRR_RANDOM_SEED", "20230820"))
NUM_STARTS = int(os.getenv("RRR_NUM_STARTS", "8"))

CSV_DIGITS = int(os.getenv("RRR_CSV_DIGITS", "17"))
SUMMARY_DIGITS = 3

PACKAGE_LOGGER = "rrr_balance_study"


def configure_logging(level: str = LOG_LEVEL) -> logging.Logger:
    """
    Attach a console handler to the package logger (once) and set its level.
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.setLevel(level)
    return logger
