"""
Residual multi-layer index learning.

    r_1 = v
    r_n = r_{n-1} - c_bar_{n-1}
    q_n = sum_{t <= n} c_bar_t          (quantized vector after level n)
    reconstruction = mean_j ||v_j - q_N,j||^2
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.lib.errors import DimensionError
from src.index.lti import lti_distance, lti_hard_assign, lti_soft_assign, soft_assign_backward


@dataclass
class ResidualChain:
    v: np.ndarray
    alphas: List[float]
    residuals: List[np.ndarray] = field(default_factory=list)     # r_n
    distances: List[np.ndarray] = field(default_factory=list)
    assignments: List[np.ndarray] = field(default_factory=list)   # a_n (soft or one-hot)
    codes: List[np.ndarray] = field(default_factory=list)         # argmin node per row
    c_bar: List[np.ndarray] = field(default_factory=list)
    q: List[np.ndarray] = field(default_factory=list)
    hard: bool = False

    @property
    def num_layers(self) -> int:
        return len(self.c_bar)

    @property
    def final_residual(self) -> np.ndarray:
        return self.v - self.q[-1] if self.q else self.v

    def reconstruction_per_item(self) -> np.ndarray:
        r = self.final_residual
        return np.einsum("sd,sd->s", r, r)

    def reconstruction_loss(self) -> float:
        return float(self.reconstruction_per_item().mean())


def residual_chain(v: np.ndarray, codebooks: Sequence[np.ndarray], alphas=None, hard: bool = False) -> ResidualChain:
    """
    Run the residual chain over ``codebooks`` (coarse to fine).

    Args:
        v: item embeddings (S, d)
        codebooks: per-layer node embeddings (K_n, d)
        alphas: per-layer temperatures (scalar broadcast to every layer)
        hard: use argmin one-hot assignments instead of the softmax

    Returns:
        ResidualChain with every intermediate needed for backward
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if np.isscalar(alphas) or alphas is None:
        alphas = [float(alphas or 0.0)] * len(codebooks)
    chain = ResidualChain(v=v, alphas=list(alphas), hard=hard)
    r = v
    q = np.zeros_like(v)
    for n, c in enumerate(codebooks):
        if c.shape[1] != v.shape[1]:
            raise DimensionError(f"index.layer{n}", v.shape[1], c.shape[1])
        d = lti_distance(r, c)
        codes = lti_hard_assign(d)
        if hard:
            a = np.zeros_like(d)
            a[np.arange(len(codes)), codes] = 1.0
            c_bar = c[codes]
        else:
            a = lti_soft_assign(d, chain.alphas[n])
            c_bar = a @ c
        chain.residuals.append(r)
        chain.distances.append(d)
        chain.assignments.append(a)
        chain.codes.append(codes)
        chain.c_bar.append(c_bar)
        q = q + c_bar
        chain.q.append(q)
        r = r - c_bar
    return chain


def residual_chain_backward(chain: ResidualChain, codebooks: Sequence[np.ndarray],
                            grad_q: Optional[Sequence[Optional[np.ndarray]]] = None,
                            grad_a: Optional[Sequence[Optional[np.ndarray]]] = None,
                            recon_weight: float = 0.0):
    """
    Gradients of a loss that depends on the chain through q_n, a_n and the
    reconstruction term (weighted by ``recon_weight``).

    Returns:
        (dLoss/dv (S, d), [dLoss/dc_n (K_n, d)])
    """
    if chain.hard:
        raise ValueError("the hard chain has no gradient")
    N = chain.num_layers
    S = chain.v.shape[0]
    grad_q = list(grad_q) if grad_q is not None else [None] * N
    grad_a = list(grad_a) if grad_a is not None else [None] * N

    # q_n = sum_{t<=n} c_bar_t, so c_bar_t collects every grad_q_n with n >= t
    grad_cbar = [np.zeros_like(chain.v) for _ in range(N)]
    running = np.zeros_like(chain.v)
    grad_v = np.zeros_like(chain.v)
    if recon_weight and N:
        r = chain.final_residual
        running = running - recon_weight * 2.0 * r / S
        grad_v = grad_v + recon_weight * 2.0 * r / S
    for n in range(N - 1, -1, -1):
        if grad_q[n] is not None:
            running = running + grad_q[n]
        grad_cbar[n] = running.copy()

    grad_c = [None] * N
    grad_r_next = np.zeros_like(chain.v)
    for n in range(N - 1, -1, -1):
        c = codebooks[n]
        a = chain.assignments[n]
        # r_{n+1} = r_n - c_bar_n
        g_cbar = grad_cbar[n] - grad_r_next
        g_a = g_cbar @ c.T
        if grad_a[n] is not None:
            g_a = g_a + grad_a[n]
        g_r, g_c = soft_assign_backward(chain.residuals[n], c, a, chain.alphas[n], g_a)
        grad_c[n] = a.T @ g_cbar + g_c
        grad_r_next = grad_r_next + g_r
    return grad_v + grad_r_next, grad_c
