"""
Engine and session handling for the run cache (SQLite through SQLAlchemy).

The cache is process-global: ``init_database`` points it at a file, and
every repository call opens a short-lived session from the shared factory.
"""

import logging
import os

from sqlalchemy import create_engine
from sqlalchemy.orm import scoped_session, sessionmaker

from .models import Base

logger = logging.getLogger(__name__)

# default cache file, next to main.py
DATABASE_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.dirname(__file__))), 'hsnn_runs.db')

_engine = None
_session_factory = None


def _dispose():
    global _engine, _session_factory
    if _session_factory is not None:
        _session_factory.remove()
    if _engine is not None:
        _engine.dispose()
    _engine, _session_factory = None, None


def init_database(database_path=None):
    """
    Open (and create if needed) the run cache at ``database_path``.

    Calling it again switches the cache to another file; sessions from the
    previous engine are released.

    Args:
        database_path: SQLite file; defaults to 'hsnn_runs.db' in the project root

    Returns:
        SQLAlchemy engine instance
    """
    global _engine, _session_factory

    path = database_path or DATABASE_PATH
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)

    _dispose()
    _engine = create_engine(f'sqlite:///{path}', echo=False, connect_args={'check_same_thread': False})
    Base.metadata.create_all(_engine)
    _session_factory = scoped_session(sessionmaker(bind=_engine))

    logger.info(f"Run cache at: {path}")
    return _engine


def get_session():
    """A new session on the current cache, opening the default file on first use."""
    if _session_factory is None:
        init_database()
    return _session_factory()


def close_session(session):
    if session:
        session.close()


def get_engine():
    if _engine is None:
        init_database()
    return _engine
