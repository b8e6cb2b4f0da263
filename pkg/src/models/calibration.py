"""
Post-hoc calibration: a per-layer, per-task logit bias chosen so the mean
predicted probability on a calibration slice equals the mean label. The
ensemble output gets the same treatment through its bias.
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from src.features.assemble import BatchInputs
from src.models.hsnn import HSNNModel, assign_batch, hsnn_forward
from src.numerics.functional import sigmoid

logger = logging.getLogger(__name__)

TARGET_EPS = 1e-6


@dataclass
class CalibrationResult:
    layer_bias: np.ndarray          # (N, T)
    ensemble_shift: np.ndarray      # (T,)
    gap_before: np.ndarray          # (N + 1, T) mean prediction - mean label
    gap_after: np.ndarray


def fit_bias(logits: np.ndarray, target: float, lo: float = -60.0, hi: float = 60.0,
             tol: float = 1e-12, max_iter: int = 200) -> float:
    """
    Solve mean(sigmoid(logits + b)) = target for b by bisection. The left side
    is increasing in b, so the root is unique.
    """
    target = float(np.clip(target, TARGET_EPS, 1.0 - TARGET_EPS))
    f = lambda b: float(sigmoid(logits + b).mean()) - target
    if f(lo) > 0:
        return lo
    if f(hi) < 0:
        return hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def _collect(model: HSNNModel, batches: List[BatchInputs]):
    layer_logits = [[] for _ in range(model.num_layers)]
    labels = []
    for batch in batches:
        paths = assign_batch(model, batch) if model.num_layers > 1 else None
        layers, _ = hsnn_forward(model, batch, paths)
        for n, logits in enumerate(layers.logits):
            layer_logits[n].append(logits)
        labels.append(batch.labels)
    return [np.concatenate(x, axis=0) for x in layer_logits], np.concatenate(labels, axis=0)


def _gaps(model: HSNNModel, layer_logits: List[np.ndarray], labels: np.ndarray) -> np.ndarray:
    rows = [sigmoid(x).mean(axis=0) for x in layer_logits]
    rows.append(sigmoid(model.ensemble.forward(layer_logits)).mean(axis=0))
    return np.stack(rows) - labels.mean(axis=0)[None, :]


def calibrate(model: HSNNModel, batches: List[BatchInputs]) -> CalibrationResult:
    """
    Fit calibration biases in place on ``model``.

    Layer biases are fitted first (each from scratch, ignoring any previous
    calibration); the ensemble shift is then fitted on the calibrated layer
    outputs.
    """
    model.calibration[...] = 0.0
    layer_logits, labels = _collect(model, batches)
    before = _gaps(model, layer_logits, labels)
    targets = labels.mean(axis=0)
    for n, logits in enumerate(layer_logits):
        for t in range(model.num_tasks):
            model.calibration[n, t] = fit_bias(logits[:, t], targets[t])
    calibrated = [x + model.calibration[n][None, :] for n, x in enumerate(layer_logits)]
    final = model.ensemble.forward(calibrated)
    shift = np.array([fit_bias(final[:, t], targets[t]) for t in range(model.num_tasks)])
    model.ensemble.bias += shift
    model.calibrated = True
    after = _gaps(model, calibrated, labels)
    logger.info(f"Calibrated {model.num_layers} layers: max |gap| {np.abs(before).max():.4f} -> {np.abs(after).max():.2e}")
    return CalibrationResult(model.calibration.copy(), shift, before, after)
