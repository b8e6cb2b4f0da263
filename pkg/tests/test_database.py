"""
Tests for the SQLite run cache.
"""

import sys
import os

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.database import (
    check_run_exists,
    delete_run,
    get_session,
    init_database,
    list_runs,
    load_run,
    save_run,
)
from src.database.models import Run, RunMetric


def test_database_init(tmp_path):
    path = str(tmp_path / "cache" / "runs.db")
    init_database(path)
    assert os.path.exists(path)
    session = get_session()
    try:
        assert session.query(Run).count() == 0
    finally:
        session.close()


def test_save_and_load_run(tmp_path):
    init_database(str(tmp_path / "runs.db"))
    assert not check_run_exists("abc")
    save_run("abc", "JOIM", 3, {"balance": False}, "cfg", {"ne_task_0": 0.81, "recall_at_10": 0.4},
             dataset_hash="data", report_hash="report")
    assert check_run_exists("abc")
    run = load_run("abc")
    assert run["mode"] == "JOIM"
    assert run["seed"] == 3
    assert run["toggles"] == {"balance": False}
    assert run["metrics"] == {"ne_task_0": 0.81, "recall_at_10": 0.4}
    assert run["report_hash"] == "report"
    assert load_run("missing") is None


def test_saving_a_key_again_replaces_the_run(tmp_path):
    init_database(str(tmp_path / "runs.db"))
    save_run("abc", "EM", 1, {}, "cfg", {"ne_task_0": 0.9})
    save_run("abc", "EM", 1, {}, "cfg", {"ne_task_0": 0.7})
    assert [r["metrics"] for r in list_runs()] == [{"ne_task_0": 0.7}]
    session = get_session()
    try:
        assert session.query(RunMetric).count() == 1
    finally:
        session.close()


def test_list_and_delete_runs(tmp_path):
    init_database(str(tmp_path / "runs.db"))
    save_run("a", "JOIM", 0, {}, "cfg", {})
    save_run("b", "SIL", 0, {}, "cfg", {})
    assert [r["run_key"] for r in list_runs()] == ["a", "b"]
    assert [r["run_key"] for r in list_runs(mode="SIL")] == ["b"]
    assert delete_run("a")
    assert not delete_run("a")
    assert not check_run_exists("a")
