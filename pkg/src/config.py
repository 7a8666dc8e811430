import os
import logging
from typing import Optional
from dotenv import load_dotenv

# Load env vars before anything reads them
load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Numeric tolerances
EXACT_TOL = 1e-12
OPT_TOL = 1e-9
LP_TOL = 1e-7
TIE_TOL = 1e-14

# Defaults
DEFAULT_LAMBDA = 0.5
LADDER_EPS = 1e-12
SUBDIVISIONS = 256
FIT_KNOTS = 256
C_GRID = 100
MC_BATCH = 65536
Z_THRESHOLD = 4.0
PAYMENT_BOX = 2.0
DEGENERATE_STALL = 50


def get_log_level() -> int:
    """Resolve LOG_LEVEL from the environment, falling back to INFO."""
    name = os.getenv('LOG_LEVEL', 'INFO').upper()
    return getattr(logging, name, logging.INFO)


def get_database_url() -> Optional[str]:
    """Archive location for run summaries; None disables archiving."""
    url = os.getenv('DATABASE_URL')
    return url or None


def setup_logging(level: Optional[int] = None) -> None:
    """Configure root logging on stderr, leaving stdout for reports."""
    logging.basicConfig(
        level=level if level is not None else get_log_level(),
        format=LOG_FORMAT
    )
