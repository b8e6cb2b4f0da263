"""
PNG plots for a finished run: loss terms over training steps and the node
occupancy histogram of the finest index level.
"""

import logging
import os
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

logger = logging.getLogger(__name__)

TRACE_META = ("step", "phase", "alpha", "index_weight", "ts")


def plot_loss_trace(trace: pd.DataFrame, path: str) -> str:
    """Every loss term of the trace against the training step, log scale, phases shaded."""
    terms = [c for c in trace.columns if c not in TRACE_META]
    fig, axes = plt.subplots(1, 2, figsize=(14, 5))
    ax = axes[0]
    for term in terms:
        values = trace[term].to_numpy(dtype=np.float64)
        if np.all(values <= 0):
            continue
        ax.plot(trace["step"], np.maximum(values, 1e-12), label=term, alpha=0.8)
    ax.set_xlabel("Step")
    ax.set_ylabel("Loss")
    ax.set_yscale("log")
    ax.set_title("Loss terms")
    ax.legend(fontsize=8)
    if "phase" in trace:
        changes = trace.index[trace["phase"] != trace["phase"].shift()].tolist()[1:]
        for row in changes:
            ax.axvline(trace.loc[row, "step"], color="gray", linestyle="--", linewidth=0.8)

    ax = axes[1]
    if "alpha" in trace:
        ax.plot(trace["step"], trace["alpha"], label="alpha")
    if "index_weight" in trace:
        ax.plot(trace["step"], trace["index_weight"], label="index weight")
    ax.set_xlabel("Step")
    ax.set_title("Index schedule")
    ax.legend(fontsize=8)

    plt.tight_layout()
    plt.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    logger.debug(f"Saved loss plot to {path}")
    return path


def plot_occupancy(counts: Sequence[int], path: str, title: str = "Items per node") -> str:
    counts = np.asarray(counts, dtype=np.int64)
    fig, ax = plt.subplots(figsize=(9, 5))
    ax.bar(np.arange(len(counts)), counts, color="steelblue")
    if len(counts):
        ax.axhline(counts.mean(), color="red", linestyle="--", label=f"mean {counts.mean():.1f}")
        ax.legend()
    ax.set_xlabel("Node")
    ax.set_ylabel("Items")
    ax.set_title(title)
    plt.tight_layout()
    plt.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    logger.debug(f"Saved occupancy plot to {path}")
    return path


def plot_run(run_dir: str, trace: pd.DataFrame, occupancy: Sequence[int]) -> Dict[str, str]:
    return {
        "loss": plot_loss_trace(trace, os.path.join(run_dir, "loss_trace.png")),
        "occupancy": plot_occupancy(occupancy, os.path.join(run_dir, "occupancy.png")),
    }
