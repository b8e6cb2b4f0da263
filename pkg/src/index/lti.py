"""
Learning To Index: soft assignment of item embeddings to index nodes.

    d(j, k) = ||v_j - c_k||^2
    a_jk    = softmax_k(-alpha * d(j, k))
    c_bar_j = sum_k a_jk c_k

Everything accepts a single vector (d,) or a batch (S, d). Backward
functions return gradients for the batch form.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Optional, Tuple

import numpy as np

from src.lib.errors import ConfigError, DimensionError
from src.models.losses import soft_cross_entropy
from src.numerics.functional import softmax_rows


def lti_distance(v: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared L2 distance of each row of ``v`` to each node embedding in ``c`` (K, d)."""
    v = np.asarray(v, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if v.shape[-1] != c.shape[-1]:
        raise DimensionError("lti.distance", c.shape[-1], v.shape[-1])
    squeeze = v.ndim == 1
    vb = np.atleast_2d(v)
    diff = vb[:, None, :] - c[None, :, :]
    d = np.einsum("skd,skd->sk", diff, diff)
    return d[0] if squeeze else d


def lti_soft_assign(d: np.ndarray, alpha: float) -> np.ndarray:
    """softmax(-alpha * d) per row with max subtraction."""
    if alpha < 0:
        raise ConfigError("index.alpha", f"temperature must be >= 0, got {alpha}")
    d = np.asarray(d, dtype=np.float64)
    squeeze = d.ndim == 1
    a = softmax_rows(-alpha * np.atleast_2d(d))
    return a[0] if squeeze else a


def lti_hard_assign(d: np.ndarray) -> np.ndarray:
    """argmin distance; np.argmin returns the lowest node id on ties."""
    return np.argmin(np.atleast_2d(d), axis=1)


def lti_index_embedding(a: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) @ np.asarray(c, dtype=np.float64)


def lti_index_loss(u: np.ndarray, c_bar: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Binary log loss of sigmoid(<u_j, c_bar_j>) against y_j, averaged over rows.

    Returns:
        (loss, dLoss/du, dLoss/dc_bar)
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    c_bar = np.atleast_2d(np.asarray(c_bar, dtype=np.float64))
    if u.shape != c_bar.shape:
        raise DimensionError("lti.index_loss", u.shape, c_bar.shape)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    z = (u * c_bar).sum(axis=1, keepdims=True)
    loss, gz = soft_cross_entropy(z, y)
    return loss, gz * c_bar, gz * u


def soft_assign_backward(v: np.ndarray, c: np.ndarray, a: np.ndarray, alpha: float,
                         grad_a: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Backpropagate dLoss/da through a = softmax(-alpha * ||v - c||^2).

    Returns:
        (dLoss/dv (S, d), dLoss/dc (K, d))
    """
    grad_z = a * (grad_a - (a * grad_a).sum(axis=1, keepdims=True))
    grad_d = -alpha * grad_z
    row = grad_d.sum(axis=1, keepdims=True)
    grad_v = 2.0 * (row * v - grad_d @ c)
    grad_c = -2.0 * (grad_d.T @ v - grad_d.sum(axis=0)[:, None] * c)
    return grad_v, grad_c


@dataclass
class SchedulerState:
    max_alpha: float
    exp: float
    max_iters: int
    current_iter: int = 0


def scheduler_alpha(state: SchedulerState) -> float:
    """alpha = max_alpha * (current / max_iters)^exp, held at max_alpha afterwards."""
    if state.max_iters <= 0:
        return float(state.max_alpha)
    frac = min(state.current_iter, state.max_iters) / state.max_iters
    return float(state.max_alpha * frac ** state.exp)


def warmup_weight(step: int, warmup_steps: int, target_weight: float) -> float:
    if warmup_steps <= 0 or step >= warmup_steps:
        return float(target_weight)
    return float(target_weight) * max(step, 0) / warmup_steps


@dataclass
class BalanceRegState:
    """Soft assignments of the most recent ``k_batches`` batches."""
    k_batches: int
    buffer: Deque[np.ndarray] = field(default_factory=deque)

    def push(self, a: np.ndarray):
        self.buffer.append(np.array(a, dtype=np.float64, copy=True))
        while len(self.buffer) > self.k_batches:
            self.buffer.popleft()

    def pooled(self, current: Optional[np.ndarray] = None) -> np.ndarray:
        # the current batch takes the place of the oldest buffered one
        history = list(self.buffer)
        if current is not None:
            history = history[len(history) - self.k_batches + 1:] if self.k_batches > 1 else []
            history.append(current)
        if not history:
            raise ValueError("balance regularizer has no pooled assignments")
        return np.concatenate(history, axis=0)


def flops_regularizer(state: BalanceRegState, current: Optional[np.ndarray] = None) -> Tuple[float, Optional[np.ndarray]]:
    """
    Sum over nodes of the squared mean soft assignment in the pooled window.

    Buffered batches are constants; the gradient is taken wrt ``current``.

    Returns:
        (penalty, dPenalty/dcurrent or None)
    """
    pooled = state.pooled(current)
    mean = pooled.mean(axis=0)
    penalty = float((mean * mean).sum())
    if current is None:
        return penalty, None
    grad = np.broadcast_to(2.0 * mean / pooled.shape[0], current.shape).copy()
    return penalty, grad
