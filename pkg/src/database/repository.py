"""
Data access layer for the run cache.
"""

import logging

from .connection import close_session, get_session
from .models import Run, RunMetric

logger = logging.getLogger(__name__)


def check_run_exists(run_key):
    """
    Check if a run with this key is already cached.

    Args:
        run_key: Hash identifying (config, seed, dataset)

    Returns:
        True if the run exists, False otherwise
    """
    session = get_session()
    try:
        return session.query(Run).filter(Run.run_key == run_key).first() is not None
    finally:
        close_session(session)


def save_run(run_key, mode, seed, toggles, config_hash, metrics, dataset_hash=None, report_hash=None):
    """
    Save a finished run and its metrics. An existing run with the same key is
    replaced.

    Args:
        run_key: Hash identifying (config, seed, dataset)
        mode: Training mode ('JOIM', 'SIL', 'EM')
        seed: Run seed
        toggles: Dict of ablation toggles
        config_hash: Hash of the full run config
        metrics: Dict of metric name -> float
        dataset_hash: Optional content hash of the training data
        report_hash: Optional hash of the metrics report

    Returns:
        Run id
    """
    session = get_session()
    try:
        existing = session.query(Run).filter(Run.run_key == run_key).first()
        if existing:
            session.delete(existing)
            session.flush()

        run = Run(
            run_key=run_key,
            mode=mode,
            seed=int(seed),
            toggles=dict(toggles or {}),
            config_hash=config_hash,
            dataset_hash=dataset_hash,
            report_hash=report_hash,
        )
        session.add(run)
        session.flush()
        for name, value in sorted(metrics.items()):
            session.add(RunMetric(run_id=run.id, name=name, value=float(value)))
        session.commit()
        logger.debug(f"Cached run {run_key[:8]} ({mode}, seed {seed}, {len(metrics)} metrics)")
        return run.id
    except Exception:
        session.rollback()
        raise
    finally:
        close_session(session)


def _to_dict(run):
    return {
        'run_key': run.run_key,
        'mode': run.mode,
        'seed': run.seed,
        'toggles': dict(run.toggles or {}),
        'config_hash': run.config_hash,
        'dataset_hash': run.dataset_hash,
        'report_hash': run.report_hash,
        'metrics': {m.name: m.value for m in run.metrics},
    }


def load_run(run_key):
    """
    Load a cached run.

    Returns:
        Dictionary with run metadata and a 'metrics' dict, or None if not found
    """
    session = get_session()
    try:
        run = session.query(Run).filter(Run.run_key == run_key).first()
        return _to_dict(run) if run else None
    finally:
        close_session(session)


def list_runs(mode=None):
    session = get_session()
    try:
        query = session.query(Run)
        if mode is not None:
            query = query.filter(Run.mode == mode)
        return [_to_dict(run) for run in query.order_by(Run.id).all()]
    finally:
        close_session(session)


def delete_run(run_key):
    session = get_session()
    try:
        run = session.query(Run).filter(Run.run_key == run_key).first()
        if run is None:
            return False
        session.delete(run)
        session.commit()
        return True
    finally:
        close_session(session)
