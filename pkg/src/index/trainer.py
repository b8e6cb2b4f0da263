"""
Gradient training of the index codebooks.

``index_objective`` builds the index-side loss terms shared by joint
training and the standalone LTITrainer:

    index log loss   sum_n warm * w_idx * BCE(<u, q_n>, y)
    FLOPs balance    w_bal * sum_n sum_k (mean pooled a_nk)^2
    reconstruction   w_rec * mean ||v - q_N||^2
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from src.config import IndexConfig
from src.index.hierarchy import HierarchicalIndex
from src.index.lti import (
    BalanceRegState,
    SchedulerState,
    flops_regularizer,
    lti_index_loss,
    scheduler_alpha,
    warmup_weight,
)
from src.index.residual import ResidualChain, residual_chain, residual_chain_backward
from src.lib.errors import NonFiniteLossError
from src.numerics.optim import Optimizer

logger = logging.getLogger(__name__)


@dataclass
class IndexTerms:
    terms: Dict[str, float] = field(default_factory=dict)
    grad_q: List[Optional[np.ndarray]] = field(default_factory=list)
    grad_a: List[Optional[np.ndarray]] = field(default_factory=list)
    grad_u: Optional[np.ndarray] = None
    recon_weight: float = 0.0

    @property
    def total(self) -> float:
        return float(sum(self.terms.values()))


def index_objective(chain: ResidualChain, u: Optional[np.ndarray], y: Optional[np.ndarray],
                    index_weight: float, balance_weight: float,
                    balance_states: Optional[List[BalanceRegState]], recon_weight: float) -> IndexTerms:
    """Loss values and upstream gradients of the index terms; zero-weight terms are skipped."""
    N = chain.num_layers
    out = IndexTerms(grad_q=[None] * N, grad_a=[None] * N, recon_weight=recon_weight)
    if u is not None and index_weight != 0.0 and N:
        out.grad_u = np.zeros_like(u)
        total = 0.0
        for n in range(N):
            loss, gu, gq = lti_index_loss(u, chain.q[n], y)
            total += loss
            out.grad_u += index_weight * gu
            out.grad_q[n] = index_weight * gq
        out.terms["index"] = index_weight * total
    if balance_states is not None and balance_weight != 0.0 and N:
        total = 0.0
        for n in range(N):
            penalty, grad = flops_regularizer(balance_states[n], chain.assignments[n])
            total += penalty
            out.grad_a[n] = balance_weight * grad
        out.terms["balance"] = balance_weight * total
    if recon_weight != 0.0 and N:
        out.terms["recon"] = recon_weight * chain.reconstruction_loss()
    return out


class IndexSchedule:
    """Temperature, warmup and balance buffers driven by the global step."""

    def __init__(self, config: IndexConfig, total_steps: int, num_levels: int):
        self.config = config
        self.scheduler = SchedulerState(config.max_alpha, config.exp, config.max_iters or total_steps)
        self.balance = [BalanceRegState(config.balance_batches) for _ in range(num_levels)]

    def alpha(self, step: int) -> float:
        if not self.config.scheduler:
            return float(self.config.max_alpha)
        self.scheduler.current_iter = step
        return scheduler_alpha(self.scheduler)

    def index_weight(self, step: int) -> float:
        if not self.config.warmup:
            return float(self.config.index_loss_weight)
        return warmup_weight(step, self.config.warmup_steps, self.config.index_loss_weight)

    def balance_weight(self) -> float:
        return float(self.config.balance_weight) if self.config.balance else 0.0

    def push(self, chain: ResidualChain):
        if self.balance_weight():
            for state, a in zip(self.balance, chain.assignments):
                state.push(a)


class LTITrainer:
    """
    Index-only training on fixed item embeddings (and optionally fixed user
    embeddings with labels for the index log loss).
    """

    def __init__(self, index: HierarchicalIndex, config: IndexConfig, optimizer: Optimizer, total_steps: int):
        self.index = index
        self.config = config
        self.optimizer = optimizer
        self.schedule = IndexSchedule(config, total_steps, index.num_levels)
        self.step_count = 0

    def step(self, v: np.ndarray, u: Optional[np.ndarray] = None, y: Optional[np.ndarray] = None) -> Dict[str, float]:
        alpha = self.schedule.alpha(self.step_count)
        chain = residual_chain(v, self.index.codebooks, alpha)
        terms = index_objective(chain, u, y, self.schedule.index_weight(self.step_count),
                                self.schedule.balance_weight(), self.schedule.balance, self.config.recon_weight)
        for name, value in terms.terms.items():
            if not np.isfinite(value):
                raise NonFiniteLossError(name, self.step_count, value, {"alpha": alpha})
        _, grad_c = residual_chain_backward(chain, self.index.codebooks, terms.grad_q, terms.grad_a,
                                            terms.recon_weight)
        self.optimizer.step(self.index.parameters(),
                            {f"codebook.{n}": g for n, g in enumerate(grad_c)})
        self.schedule.push(chain)
        self.step_count += 1
        return {"step": self.step_count, "alpha": alpha, **terms.terms}

    def fit(self, v: np.ndarray, num_steps: int, batch_size: int, rng: np.random.Generator,
            u: Optional[np.ndarray] = None, y: Optional[np.ndarray] = None) -> pd.DataFrame:
        rows = []
        for _ in range(num_steps):
            batch = rng.choice(len(v), size=min(batch_size, len(v)), replace=False)
            rows.append(self.step(v[batch], None if u is None else u[batch], None if y is None else y[batch]))
        logger.info(f"LTI fit: {num_steps} steps, final alpha {rows[-1]['alpha'] if rows else 0.0:.2f}")
        return pd.DataFrame(rows)
