"""
Run cache for experiment results.

Finished runs and their metrics are stored in SQLite so repeated ablation
grids skip work that is already done.
"""

from .connection import init_database, get_session, close_session
from .repository import (
    save_run,
    load_run,
    check_run_exists,
    list_runs,
    delete_run,
)

__all__ = [
    'init_database',
    'get_session',
    'close_session',
    'save_run',
    'load_run',
    'check_run_exists',
    'list_runs',
    'delete_run',
]
