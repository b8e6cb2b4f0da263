"""
Multi-task cross-entropy losses on logits.

Every loss here returns ``(value, dLoss/dlogits)``. Probabilities are
clamped to [EPS, 1 - EPS] before the log; inside the clamped region the loss
is flat, so the gradient there is 0.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.lib.errors import DimensionError
from src.numerics.functional import sigmoid

EPS = 1e-7


def _logits(preds) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(preds, "logits", preds), dtype=np.float64))


def _clamped(z: np.ndarray):
    p = sigmoid(z)
    inside = (p > EPS) & (p < 1.0 - EPS)
    return np.clip(p, EPS, 1.0 - EPS), p, inside


def soft_cross_entropy(logits: np.ndarray, targets: np.ndarray,
                       weights: Optional[Sequence[float]] = None) -> Tuple[float, np.ndarray]:
    """
    -(1/S) sum_i sum_t w_t [y log p + (1 - y) log(1 - p)] for targets in [0, 1].
    """
    if logits.shape != targets.shape:
        raise DimensionError("loss.targets", logits.shape, targets.shape)
    S, T = logits.shape
    w = np.ones(T) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (T,):
        raise DimensionError("loss.task_weights", T, w.shape)
    pc, p, inside = _clamped(logits)
    ce = -(targets * np.log(pc) + (1.0 - targets) * np.log1p(-pc))
    loss = float((ce * w[None, :]).sum() / S)
    grad = np.where(inside, (p - targets), 0.0) * w[None, :] / S
    return loss, grad


def supervised_loss(preds, labels, weights: Optional[Sequence[float]] = None) -> float:
    return soft_cross_entropy(_logits(preds), np.atleast_2d(np.asarray(labels, dtype=np.float64)), weights)[0]


def supervised_loss_grad(preds, labels, weights: Optional[Sequence[float]] = None) -> Tuple[float, np.ndarray]:
    return soft_cross_entropy(_logits(preds), np.atleast_2d(np.asarray(labels, dtype=np.float64)), weights)


def distillation_loss(student, teacher_probs) -> float:
    return distillation_loss_grad(student, teacher_probs)[0]


def distillation_loss_grad(student, teacher_probs) -> Tuple[float, np.ndarray]:
    """Soft cross-entropy against a teacher's probabilities (no task weights)."""
    return soft_cross_entropy(_logits(student), np.atleast_2d(np.asarray(teacher_probs, dtype=np.float64)))


def total_loss(preds, labels, weights: Optional[Sequence[float]] = None,
               teacher_probs: Union[np.ndarray, None] = None,
               distill_weight: float = 1.0) -> Tuple[float, np.ndarray]:
    """Supervised loss plus the optional distillation term, with the summed gradient."""
    loss, grad = supervised_loss_grad(preds, labels, weights)
    if teacher_probs is not None and distill_weight != 0.0:
        d_loss, d_grad = distillation_loss_grad(preds, teacher_probs)
        loss += distill_weight * d_loss
        grad = grad + distill_weight * d_grad
    return loss, grad
