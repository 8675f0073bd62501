import logging
import os
from typing import Optional

from nonlocal_acf.core.config import settings


def setup_logging(level: Optional[str] = None):
    """Set up logging configuration."""
    logging.basicConfig(
        level=getattr(logging, (level or settings.LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def initialize_app(level: Optional[str] = None):
    """Initialize logging and the point-cache directory."""
    setup_logging(level)

    logging.info("Preparing cache directory %s", settings.NONLOCAL_ACF_CACHE_DIR)
    os.makedirs(settings.NONLOCAL_ACF_CACHE_DIR, exist_ok=True)

    if settings.USE_PERSISTENT_CACHE:
        from nonlocal_acf.core.database import init_db
        logging.info("Initializing persistent point cache...")
        init_db()
        logging.info("Persistent point cache initialized")

    logging.info("%s %s initialized", settings.PROJECT_NAME, settings.PROJECT_VERSION)


def check_dependencies():
    """Check if all required dependencies are available."""
    try:
        import numpy  # noqa: F401
        import scipy.special  # noqa: F401
        import scipy.integrate  # noqa: F401
        logging.info("All dependencies available")
        return True
    except ImportError as e:
        logging.error(f"Missing dependency: {e}")
        return False
