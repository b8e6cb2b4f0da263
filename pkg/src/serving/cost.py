"""
Multiply-accumulate accounting for retrieval requests.

Measured cost is what the head matmuls of a request actually executed
(metered in the numeric layers). The theoretical cost is sum_n M_n * I_n:
the per-evaluation MACs of layer n's head times the number of nodes (or
items) it scored. The user tower runs once per request and is reported
separately.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from src.models.hsnn import HSNNModel
from src.models.monn import MoNNModel

logger = logging.getLogger(__name__)


@dataclass
class CostCounter:
    layer_presets: List[str]
    macs_per_eval: List[int]
    evaluations: List[int] = field(default_factory=list)
    macs: List[int] = field(default_factory=list)
    user_tower_macs: int = 0

    def __post_init__(self):
        if not self.evaluations:
            self.evaluations = [0] * len(self.macs_per_eval)
        if not self.macs:
            self.macs = [0] * len(self.macs_per_eval)

    def add(self, layer: int, rows: int, macs: int):
        """Record one batched head evaluation of ``rows`` rows that executed ``macs`` MACs."""
        self.evaluations[layer] += rows
        self.macs[layer] += int(macs)

    @property
    def total_macs(self) -> int:
        return int(sum(self.macs))

    @property
    def items_scored(self) -> int:
        return self.evaluations[-1] if self.evaluations else 0


def counter_for(model: HSNNModel) -> CostCounter:
    return CostCounter(
        layer_presets=[p.name for p in model.presets],
        macs_per_eval=model.macs_per_layer(),
        user_tower_macs=sum(t.macs() for t in model.user_towers),
    )


def theoretical_cost(macs_per_eval: Sequence[int], evaluations: Sequence[int]) -> int:
    return int(sum(m * i for m, i in zip(macs_per_eval, evaluations)))


def brute_force_macs(model: MoNNModel, num_items: int) -> int:
    """M * V for a single MoNN scoring every item with cached item embeddings."""
    return model.scoring_macs() * num_items


@dataclass
class CostReport:
    measured: int
    formula: int
    relative_error: float
    evaluations: List[int]
    user_tower_macs: int
    brute_force: Optional[int] = None
    macs_per_eval: List[int] = field(default_factory=list)

    @property
    def fraction_of_brute_force(self) -> Optional[float]:
        if not self.brute_force:
            return None
        return self.measured / self.brute_force

    def formula_text(self) -> str:
        return " + ".join(f"{m}*{i}" for m, i in zip(self.macs_per_eval, self.evaluations))


def account_cost(counter: CostCounter, brute_force: Optional[int] = None) -> CostReport:
    """
    Compare the counted MACs of a request with the formula evaluated on its
    per-layer evaluation counts.
    """
    measured = counter.total_macs
    formula = theoretical_cost(counter.macs_per_eval, counter.evaluations)
    error = abs(measured - formula) / formula if formula else 0.0
    report = CostReport(measured=measured, formula=formula, relative_error=error,
                        evaluations=list(counter.evaluations), user_tower_macs=counter.user_tower_macs,
                        brute_force=brute_force, macs_per_eval=list(counter.macs_per_eval))
    logger.debug(f"Cost: measured {measured}, formula {report.formula_text()} = {formula}")
    return report
