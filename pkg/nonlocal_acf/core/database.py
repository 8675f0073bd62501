from contextlib import contextmanager
import os
from typing import Iterator

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker, Session

from nonlocal_acf.core.config import settings

_engine = None
_session_factory = None


def get_engine() -> Engine:
    """Create the SQLite engine for the point cache on first use."""
    global _engine, _session_factory
    if _engine is None:
        os.makedirs(settings.NONLOCAL_ACF_CACHE_DIR, exist_ok=True)
        db_url = settings.cache_db_url
        _engine = create_engine(
            db_url,
            connect_args={"check_same_thread": False} if db_url.startswith("sqlite") else {}
        )
        _session_factory = sessionmaker(autocommit=False, autoflush=False, bind=_engine)
    return _engine


def SessionLocal() -> Session:
    get_engine()
    return _session_factory()


@contextmanager
def get_db() -> Iterator[Session]:
    """Yield a session on the point-cache database and close it afterwards."""
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def init_db() -> None:
    """Create the point-cache tables."""
    from nonlocal_acf.models.base import Base
    import nonlocal_acf.models.cache_entry  # noqa: F401  registers the table
    Base.metadata.create_all(bind=get_engine())


def reset_engine() -> None:
    """Drop the cached engine (used when the cache directory changes)."""
    global _engine, _session_factory
    if _engine is not None:
        _engine.dispose()
    _engine = None
    _session_factory = None
