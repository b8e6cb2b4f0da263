"""
Ablation grid over training modes and index-training toggles.

Every (mode, toggle combination, seed) cell is an independent run. The
baseline of a cell is the same mode and seed with every toggle on, so deltas
and win rates are paired by seed.

The toggles (scheduler, warmup, balance) only shape the soft joint phase, so
modes without one (SIL, EM) get their baseline cell alone.
"""

import itertools
import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import pandas as pd

from src.config import MODES, TOGGLES, RunConfig
from src.database import check_run_exists, load_run, save_run
from src.evaluation.experiment import run_experiment
from src.evaluation.metrics import MetricsReport
from src.lib.errors import ConfigError
from src.lib.hashing import stable_hash

logger = logging.getLogger(__name__)

Runner = Callable[[RunConfig, str], MetricsReport]

# modes whose training reads the index toggles
TOGGLED_MODES = ("JOIM",)

ID_COLUMNS = ["run_id", "mode", "toggles", "seed", "config_hash", "is_baseline"]

# metric -> True when lower is better
COMPARED = {
    "ne_task_0": True,
    "occupancy_ratio": True,
    "recall_at_10": False,
}


@dataclass(frozen=True)
class GridCell:
    mode: str
    toggles: Tuple[Tuple[str, bool], ...]
    seed: int

    @property
    def is_baseline(self) -> bool:
        return all(on for _, on in self.toggles)

    def label(self) -> str:
        return ",".join(f"{name}={'on' if on else 'off'}" for name, on in self.toggles)


def default_runner(cfg: RunConfig, run_dir: str) -> MetricsReport:
    return run_experiment(cfg, run_dir).report


def grid_cells(toggles: Sequence[str], modes: Sequence[str], seeds: Sequence[int]) -> Iterator[GridCell]:
    for name in toggles:
        if name not in TOGGLES:
            raise ConfigError("eval.toggles", f"unknown toggle '{name}'")
    for mode in modes:
        if mode not in MODES:
            raise ConfigError("eval.modes", f"unknown mode '{mode}'")
    names = sorted(set(toggles))
    for mode in modes:
        combos = itertools.product((True, False), repeat=len(names)) if mode in TOGGLED_MODES \
            else [(True,) * len(names)]
        for values in combos:
            for seed in seeds:
                yield GridCell(mode, tuple(zip(names, values)), int(seed))


def cell_config(base: RunConfig, cell: GridCell) -> RunConfig:
    """
    Raises:
        ConfigError: a toggle is switched off for a mode that never reads it
    """
    if cell.mode not in TOGGLED_MODES and not cell.is_baseline:
        raise ConfigError("eval.toggles", f"{cell.mode} does not train with the index toggles")
    cfg = base.with_seed(cell.seed)
    cfg.train.mode = cell.mode
    for name, on in cell.toggles:
        setattr(cfg.index, name, on)
    return cfg.validate()


def run_key(cfg: RunConfig) -> str:
    return stable_hash({"config": cfg.to_dict(), "kind": "ablation"})


def _run_cell(cfg: RunConfig, cell: GridCell, runner: Runner, output_dir: str,
              use_cache: bool, refresh: bool) -> Dict[str, float]:
    key = run_key(cfg)
    if use_cache and not refresh and check_run_exists(key):
        cached = load_run(key)
        logger.info(f"Using cached run {key[:12]} ({cell.mode} {cell.label() or 'baseline'} seed {cell.seed})")
        return cached["metrics"]
    report = runner(cfg, os.path.join(output_dir, key[:12]))
    metrics = report.flat()
    if use_cache:
        save_run(key, cell.mode, cell.seed, dict(cell.toggles), cfg.config_hash(), metrics,
                 dataset_hash=report.dataset_hash, report_hash=report.report_hash())
    return metrics


def run_ablation_grid(base: RunConfig, toggles: Optional[Sequence[str]] = None,
                      modes: Optional[Sequence[str]] = None, seeds: Optional[Sequence[int]] = None,
                      runner: Runner = default_runner, output_dir: Optional[str] = None,
                      use_cache: bool = True, refresh: bool = False) -> pd.DataFrame:
    """
    Run every (mode, toggle combination, seed) cell.

    Args:
        base: configuration every cell starts from
        toggles: index toggles to switch; defaults to ``base.eval.toggles``
        modes: training modes; defaults to ``base.eval.modes``
        seeds: seeds; defaults to ``base.seed .. base.seed + eval.seeds - 1``
        runner: (config, run_dir) -> MetricsReport
        output_dir: parent of per-run directories; defaults to ``base.output_dir``
        use_cache: read and write the run cache
        refresh: ignore cached runs (they are overwritten)

    Returns:
        One row per cell with metric columns and ``delta_<metric>`` against
        the same-seed baseline of the same mode
    """
    toggles = list(base.eval.toggles if toggles is None else toggles)
    modes = list(base.eval.modes if modes is None else modes)
    seeds = list(range(base.seed, base.seed + base.eval.seeds) if seeds is None else seeds)
    output_dir = output_dir or base.output_dir

    rows: List[dict] = []
    for cell in grid_cells(toggles, modes, seeds):
        cfg = cell_config(base, cell)
        metrics = _run_cell(cfg, cell, runner, output_dir, use_cache, refresh)
        rows.append({
            "run_id": run_key(cfg)[:12],
            "mode": cell.mode,
            "toggles": cell.label(),
            "seed": cell.seed,
            "config_hash": cfg.config_hash(),
            "is_baseline": cell.is_baseline,
            **metrics,
        })
    df = pd.DataFrame(rows)
    logger.info(f"Ablation grid: {len(df)} runs over modes {modes}, toggles {toggles}, seeds {seeds}")
    return add_deltas(df)


def metric_columns(df: pd.DataFrame) -> List[str]:
    return [c for c in df.columns if c not in ID_COLUMNS and not c.startswith("delta_")]


def add_deltas(df: pd.DataFrame) -> pd.DataFrame:
    if df.empty:
        return df
    metrics = metric_columns(df)
    baseline = df[df["is_baseline"]].set_index(["mode", "seed"])[metrics]
    keys = pd.MultiIndex.from_frame(df[["mode", "seed"]])
    base_values = baseline.reindex(keys).to_numpy()
    out = df.copy()
    for i, name in enumerate(metrics):
        out[f"delta_{name}"] = df[name].to_numpy() - base_values[:, i]
    return out


def win_rates(df: pd.DataFrame, metrics: Optional[Dict[str, bool]] = None) -> pd.DataFrame:
    """
    Paired-seed comparison of every non-baseline cell with its baseline.

    ``baseline_wins`` counts seeds where the baseline is strictly better
    (lower, or higher for metrics marked as higher-is-better).
    """
    metrics = COMPARED if metrics is None else metrics
    rows = []
    variants = df[~df["is_baseline"]]
    for (mode, label), group in variants.groupby(["mode", "toggles"], sort=True):
        for metric, lower in metrics.items():
            delta = f"delta_{metric}"
            if delta not in group:
                continue
            values = group[delta].dropna()
            wins = int((values > 0).sum()) if lower else int((values < 0).sum())
            rows.append({"mode": mode, "toggles": label, "metric": metric, "baseline_wins": wins,
                         "ties": int((values == 0).sum()), "seeds": len(values),
                         "win_rate_vs_baseline": wins / len(values) if len(values) else 0.0})
    return pd.DataFrame(rows, columns=["mode", "toggles", "metric", "baseline_wins", "ties", "seeds",
                                       "win_rate_vs_baseline"])


def mode_win_rates(df: pd.DataFrame, reference: str = "JOIM", metric: str = "ne_task_0") -> pd.DataFrame:
    """
    Seeds on which ``reference`` (all toggles on) is strictly better than each
    other mode on a lower-is-better metric. Equal values are counted as ties.
    """
    columns = ["reference", "mode", "metric", "wins", "ties", "seeds", "win_rate"]
    if metric not in df:
        return pd.DataFrame(columns=columns)
    base = df[df["is_baseline"]].pivot_table(index="seed", columns="mode", values=metric)
    rows = []
    if reference in base:
        for mode in base.columns:
            if mode == reference:
                continue
            paired = base[[reference, mode]].dropna()
            wins = int((paired[reference] < paired[mode]).sum())
            ties = int((paired[reference] == paired[mode]).sum())
            rows.append({"reference": reference, "mode": mode, "metric": metric, "wins": wins, "ties": ties,
                         "seeds": len(paired), "win_rate": wins / len(paired) if len(paired) else 0.0})
    return pd.DataFrame(rows, columns=columns)


def write_grid(df: pd.DataFrame, output_dir: str) -> Dict[str, str]:
    os.makedirs(output_dir, exist_ok=True)
    paths = {
        "grid": os.path.join(output_dir, "ablation.csv"),
        "win_rates": os.path.join(output_dir, "win_rates.csv"),
        "modes": os.path.join(output_dir, "mode_win_rates.csv"),
    }
    df.to_csv(paths["grid"], index=False)
    if df.empty:
        pd.DataFrame().to_csv(paths["win_rates"], index=False)
        pd.DataFrame().to_csv(paths["modes"], index=False)
    else:
        win_rates(df).to_csv(paths["win_rates"], index=False)
        mode_win_rates(df).to_csv(paths["modes"], index=False)
    logger.info(f"Wrote ablation tables to {output_dir}")
    return paths
