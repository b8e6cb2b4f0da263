"""
Offline metrics: normalized entropy, Recall@K and index balance, collected
into a MetricsReport.
"""

from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from src.lib.errors import DimensionError, MetricError
from src.lib.hashing import stable_hash

EPS = 1e-12


def _log_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs, EPS, 1.0 - EPS)
    return float(-np.mean(labels * np.log(p) + (1.0 - labels) * np.log(1.0 - p)))


def normalized_entropy(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """
    Average log loss divided by the log loss of predicting the empirical
    base rate. Natural log for both, so the ratio is base-free.

    Args:
        predictions: probabilities, (S,) or (S, T)
        labels: 0/1 labels of the same shape

    Returns:
        (T,) NE per task

    Raises:
        MetricError: a task has only one label class
    """
    preds = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if preds.shape != y.shape:
        raise DimensionError("normalized_entropy", y.shape, preds.shape)
    if preds.ndim == 1:
        preds, y = preds[:, None], y[:, None]
    out = np.zeros(preds.shape[1])
    for t in range(preds.shape[1]):
        base = y[:, t].mean()
        if base <= 0.0 or base >= 1.0:
            raise MetricError(f"task {t}: NE needs both positive and negative labels (base rate {base})")
        out[t] = _log_loss(preds[:, t], y[:, t]) / _log_loss(np.full_like(y[:, t], base), y[:, t])
    return out


def recall_at_k(retrieved: Sequence[int], relevant: Iterable[int]) -> float:
    """|retrieved ∩ relevant| / |relevant|; an empty relevant set gives 0."""
    relevant = set(int(i) for i in relevant)
    if not relevant:
        return 0.0
    return len(relevant & set(int(i) for i in retrieved)) / len(relevant)


def occupancy_stats(counts: np.ndarray) -> Dict[str, float]:
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or counts.sum() == 0:
        return {"max": 0.0, "mean": 0.0, "ratio": 0.0, "empty_nodes": float(counts.size)}
    return {
        "max": float(counts.max()),
        "mean": float(counts.mean()),
        "ratio": float(counts.max() / counts.mean()),
        "empty_nodes": float((counts == 0).sum()),
    }


@dataclass
class MetricsReport:
    mode: str
    seed: int
    config_hash: str
    dataset_hash: str = ""
    ne: List[float] = field(default_factory=list)                   # ensemble, per task
    layer_ne: List[List[float]] = field(default_factory=list)       # per layer, per task
    recall: Dict[int, float] = field(default_factory=dict)
    occupancy: List[int] = field(default_factory=list)              # finest level, per codebook entry
    occupancy_ratio: float = 0.0
    macs_total: int = 0
    macs_per_request: float = 0.0
    brute_force_macs: int = 0
    items_scored: float = 0.0
    formula_error: float = 0.0
    brute_force_fraction: float = 0.0                               # mean measured / brute-force MACs

    def to_dict(self) -> dict:
        out = asdict(self)
        out["recall"] = {str(k): v for k, v in self.recall.items()}
        return out

    def report_hash(self) -> str:
        return stable_hash(self.to_dict())

    def flat(self) -> Dict[str, float]:
        """Scalar columns for CSV rows and the run cache."""
        row = {f"ne_task_{t}": v for t, v in enumerate(self.ne)}
        for n, layer in enumerate(self.layer_ne):
            row.update({f"ne_layer_{n}_task_{t}": v for t, v in enumerate(layer)})
        row.update({f"recall_at_{k}": v for k, v in sorted(self.recall.items())})
        row["occupancy_ratio"] = self.occupancy_ratio
        row["macs_total"] = float(self.macs_total)
        row["macs_per_request"] = self.macs_per_request
        row["items_scored"] = self.items_scored
        row["brute_force_fraction"] = self.brute_force_fraction
        return row


def best_layer_ne(report: MetricsReport, task: int = 0) -> Optional[float]:
    if not report.layer_ne:
        return None
    return min(layer[task] for layer in report.layer_ne)
