"""
Modular Neural Network: user, item and interaction towers feeding an
over-arch that emits one logit per task.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from src.features.assemble import BatchInputs, TowerBatch
from src.features.schema import FeatureSchema
from src.lib.errors import DimensionError
from src.models.losses import total_loss
from src.models.presets import Preset, get_preset
from src.models.towers import HeadCache, MoNNHead, Tower, TowerCache
from src.numerics.functional import sigmoid
from src.numerics.layers import Module, prefixed


@dataclass
class Prediction:
    logits: np.ndarray              # (S, T)

    @property
    def probs(self) -> np.ndarray:
        return sigmoid(self.logits)


@dataclass
class MoNNCache:
    user: TowerCache
    item: TowerCache
    head: HeadCache


class MoNNModel(Module):
    """
    Args:
        schema: feature schema shared by all towers
        preset: preset name or Preset
        num_tasks: number of task logits T
        task_weights: per-task loss weights w_t
        rng: initialisation generator
    """

    def __init__(self, schema: FeatureSchema, preset, num_tasks: int,
                 task_weights: Optional[Sequence[float]] = None,
                 rng: Optional[np.random.Generator] = None):
        self.preset: Preset = get_preset(preset) if isinstance(preset, str) else preset
        self.schema = schema
        self.num_tasks = num_tasks
        self.task_weights = np.ones(num_tasks) if task_weights is None else np.asarray(task_weights, dtype=np.float64)
        if self.task_weights.shape != (num_tasks,):
            raise DimensionError("monn.task_weights", num_tasks, self.task_weights.shape)
        self.user_tower = Tower("user", schema, ["user"], self.preset.user, rng)
        self.item_tower = Tower("item", schema, ["item"], self.preset.item, rng)
        interaction = None
        if self.preset.interaction is not None:
            interaction = Tower("interaction", schema, ["user", "item", "interaction"], self.preset.interaction, rng)
        self.head = MoNNHead("overarch", self.preset.head, self.user_tower.out_dim, self.item_tower.out_dim,
                             num_tasks, self.preset.overarch_hidden, interaction, rng)

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        params.update(prefixed("user_tower", self.user_tower.parameters()))
        params.update(prefixed("item_tower", self.item_tower.parameters()))
        params.update(prefixed("head", self.head.parameters()))
        return params

    def forward(self, user: TowerBatch, item: TowerBatch, interaction: TowerBatch,
                cache: Optional[MoNNCache] = None) -> np.ndarray:
        u = self.user_tower.forward({"user": user}, cache.user if cache else None)
        e = self.item_tower.forward({"item": item}, cache.item if cache else None)
        sides = {"user": user, "item": item, "interaction": interaction}
        return self.head.forward(u, e, sides, cache.head if cache else None)

    def new_cache(self) -> MoNNCache:
        return MoNNCache(self.user_tower.new_cache(), self.item_tower.new_cache(), self.head.new_cache())

    def backward(self, cache: MoNNCache, grad_logits: np.ndarray) -> Dict[str, np.ndarray]:
        head_grads, gu, ge = self.head.backward(cache.head, grad_logits)
        grads = prefixed("head", head_grads)
        grads.update(prefixed("user_tower", self.user_tower.backward(cache.user, gu)))
        grads.update(prefixed("item_tower", self.item_tower.backward(cache.item, ge)))
        return grads

    def macs(self) -> int:
        """MACs of one full (user, item) evaluation including both side towers."""
        return self.user_tower.macs() + self.item_tower.macs() + self.head.macs()

    def scoring_macs(self) -> int:
        """MACs per scored item once the user embedding and item embeddings are cached."""
        return self.head.macs()


def monn_forward(model: MoNNModel, user: TowerBatch, item: TowerBatch, interaction: TowerBatch) -> Prediction:
    return Prediction(model.forward(user, item, interaction))


def predict_batch(model: MoNNModel, batch: BatchInputs) -> Prediction:
    return monn_forward(model, batch.user, batch.item, batch.interaction)


def monn_loss_and_grads(model: MoNNModel, batch: BatchInputs, teacher_probs: Optional[np.ndarray] = None,
                        distill_weight: float = 1.0):
    """
    Returns:
        (loss, parameter gradients, logits)
    """
    cache = model.new_cache()
    logits = model.forward(batch.user, batch.item, batch.interaction, cache)
    loss, grad_logits = total_loss(logits, batch.labels, model.task_weights, teacher_probs, distill_weight)
    return loss, model.backward(cache, grad_logits), logits
