"""
Tests for offline metrics, the ablation grid and end-to-end runs.
"""

import sys
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.evaluation.ablation import (
    GridCell,
    cell_config,
    grid_cells,
    mode_win_rates,
    run_ablation_grid,
    win_rates,
    write_grid,
)
from src.evaluation.experiment import run_experiment
from src.evaluation.metrics import MetricsReport, normalized_entropy, occupancy_stats, recall_at_k
from src.lib.errors import ConfigError, MetricError


def test_normalized_entropy_example():
    ne = normalized_entropy(np.array([0.8, 0.2]), np.array([1, 0]))
    assert_allclose(ne, [np.log(0.8) / np.log(0.5)])
    assert_allclose(ne, [0.3219], atol=1e-4)


def test_base_rate_predictor_has_unit_ne():
    labels = np.array([[1, 0], [0, 0], [0, 1], [1, 0]])
    preds = np.tile(labels.mean(axis=0), (4, 1))
    assert_allclose(normalized_entropy(preds, labels), [1.0, 1.0])


def test_single_class_labels_have_no_ne():
    with pytest.raises(MetricError):
        normalized_entropy(np.array([0.3, 0.6]), np.array([1, 1]))


def test_recall_examples():
    assert recall_at_k([1, 2, 3], [1, 2, 3]) == 1.0
    assert recall_at_k([4, 5], [1, 2]) == 0.0
    assert recall_at_k(range(7), range(10)) == 0.7
    assert recall_at_k([1], []) == 0.0


def test_occupancy_stats():
    stats = occupancy_stats(np.array([4, 0, 2, 2]))
    assert stats["max"] == 4.0
    assert stats["ratio"] == 2.0
    assert stats["empty_nodes"] == 1.0
    assert occupancy_stats(np.zeros(0))["ratio"] == 0.0


def _stub_runner(cfg, run_dir):
    off = sum(not getattr(cfg.index, name) for name in ("scheduler", "warmup", "balance"))
    mode_penalty = {"JOIM": 0.0, "SIL": 0.02, "EM": 0.01}[cfg.train.mode]
    ne = 0.8 + 0.01 * off + mode_penalty + 0.001 * cfg.seed
    return MetricsReport(mode=cfg.train.mode, seed=cfg.seed, config_hash=cfg.config_hash(), ne=[ne, 0.9],
                         recall={10: 0.5 - 0.05 * off})


def test_grid_covers_every_toggle_combination(tiny_config, tmp_path):
    df = run_ablation_grid(tiny_config(), toggles=["balance", "warmup"], modes=["JOIM"], seeds=[0],
                           runner=_stub_runner, output_dir=str(tmp_path), use_cache=False)
    assert len(df) == 4
    assert df["run_id"].nunique() == 4
    assert df["is_baseline"].sum() == 1
    assert set(df["toggles"]) == {"balance=on,warmup=on", "balance=on,warmup=off",
                                  "balance=off,warmup=on", "balance=off,warmup=off"}
    worst = df[df["toggles"] == "balance=off,warmup=off"].iloc[0]
    assert_allclose(worst["delta_ne_task_0"], 0.02)


def test_empty_toggle_set_is_a_single_baseline_run(tiny_config, tmp_path):
    df = run_ablation_grid(tiny_config(), toggles=[], modes=["JOIM"], seeds=[0], runner=_stub_runner,
                           output_dir=str(tmp_path), use_cache=False)
    assert len(df) == 1
    assert bool(df["is_baseline"].iloc[0])
    assert df["delta_ne_task_0"].iloc[0] == 0.0


def test_unknown_toggle_is_a_config_error():
    with pytest.raises(ConfigError):
        list(grid_cells(["dropout"], ["JOIM"], [0]))


def test_cell_config_switches_the_toggle(tiny_config):
    cfg = cell_config(tiny_config(), GridCell("JOIM", (("balance", False),), 7))
    assert cfg.train.mode == "JOIM"
    assert cfg.seed == 7 and cfg.world.seed == 7
    assert cfg.index.balance is False


def test_toggles_are_only_ablated_for_joint_training(tiny_config):
    cells = list(grid_cells(["balance", "warmup"], ["JOIM", "SIL", "EM"], [0, 1]))
    assert sum(c.mode == "JOIM" for c in cells) == 8
    assert all(c.is_baseline for c in cells if c.mode != "JOIM")
    assert sum(c.mode == "SIL" for c in cells) == 2
    with pytest.raises(ConfigError):
        cell_config(tiny_config(), GridCell("SIL", (("balance", False),), 7))


def test_win_rates_are_paired_by_seed(tiny_config, tmp_path):
    df = run_ablation_grid(tiny_config(), toggles=["balance"], modes=["JOIM", "SIL"], seeds=[0, 1, 2],
                           runner=_stub_runner, output_dir=str(tmp_path), use_cache=False)
    assert len(df) == 9
    rates = win_rates(df)
    ne = rates[rates["metric"] == "ne_task_0"]
    assert list(ne["mode"]) == ["JOIM"]
    assert list(ne["seeds"]) == [3]
    assert (ne["win_rate_vs_baseline"] == 1.0).all()
    recall = rates[rates["metric"] == "recall_at_10"]
    assert (recall["baseline_wins"] == 3).all()
    assert (recall["ties"] == 0).all()

    modes = mode_win_rates(df)
    assert list(modes["mode"]) == ["SIL"]
    assert modes["win_rate"].iloc[0] == 1.0
    assert modes["ties"].iloc[0] == 0
    assert mode_win_rates(df, metric="missing").empty

    paths = write_grid(df, str(tmp_path / "tables"))
    assert all(os.path.exists(p) for p in paths.values())


def test_equal_metrics_are_ties_not_wins(tiny_config, tmp_path):
    def same_for_every_mode(cfg, run_dir):
        return MetricsReport(mode=cfg.train.mode, seed=cfg.seed, config_hash=cfg.config_hash(),
                             ne=[0.8, 0.9], recall={10: 0.5})

    df = run_ablation_grid(tiny_config(), toggles=[], modes=["JOIM", "SIL", "EM"], seeds=[0, 1, 2],
                           runner=same_for_every_mode, output_dir=str(tmp_path), use_cache=False)
    modes = mode_win_rates(df)
    assert list(modes["mode"]) == ["EM", "SIL"]
    assert (modes["wins"] == 0).all()
    assert (modes["ties"] == 3).all()
    assert (modes["win_rate"] == 0.0).all()


@pytest.mark.slow
def test_run_experiment_is_deterministic(tiny_config, tmp_path):
    a = run_experiment(tiny_config(), str(tmp_path / "a")).report
    b = run_experiment(tiny_config(), str(tmp_path / "b")).report
    assert a.report_hash() == b.report_hash()
    assert sorted(a.recall) == [5, 10]
    assert all(0.0 <= r <= 1.0 for r in a.recall.values())
    assert len(a.layer_ne) == 2
    assert sum(a.occupancy) == tiny_config().world.num_items
    assert a.formula_error == 0.0
    assert os.path.exists(tmp_path / "a" / "report.json")
    assert 0.0 < a.brute_force_fraction


@pytest.mark.slow
def test_joint_training_beats_two_stage_modes_on_paired_seeds(tiny_config, tmp_path):
    base = tiny_config(num_batches=60, batch_size=32, eval_examples=1000)
    ne = {}
    for mode in ("JOIM", "SIL", "EM"):
        for seed in range(10):
            cfg = cell_config(base, GridCell(mode, (), seed))
            ne[mode, seed] = run_experiment(cfg, str(tmp_path / f"{mode}_{seed}")).report.ne[0]
    assert sum(ne["JOIM", s] <= ne["SIL", s] for s in range(10)) >= 7
    assert sum(ne["JOIM", s] <= ne["EM", s] for s in range(10)) >= 6
