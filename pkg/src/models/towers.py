"""
Towers and heads shared by MoNN and HSNN.

A Tower pools the sparse features of the sides it reads through hashed
embedding tables, concatenates them with the dense features and runs an MLP
emitting ``num_embed * dim`` values. A MoNNHead turns (user embedding, item
or node embedding, optional interaction embedding) into per-task logits.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.features.assemble import TowerBatch
from src.features.schema import FeatureSchema
from src.lib.errors import DimensionError
from src.numerics.layers import MLP, EmbeddingTable, MLPCache, Module, prefixed, record_macs


@dataclass(frozen=True)
class TowerConfig:
    num_embed: int
    dim: int
    hidden: Tuple[int, ...] = ()

    @property
    def out_dim(self) -> int:
        return self.num_embed * self.dim


@dataclass
class TowerCache:
    batches: Dict[str, TowerBatch]
    counts: Dict[str, np.ndarray]
    mlp: MLPCache = field(default_factory=MLPCache)


class Tower(Module):
    """
    Args:
        name: prefix used in parameter names and errors
        schema: feature schema
        sides: which sides ("user", "item", "interaction") feed this tower
        config: output shape and hidden sizes
        rng: initialisation generator
    """

    def __init__(self, name: str, schema: FeatureSchema, sides: Sequence[str], config: TowerConfig,
                 rng: Optional[np.random.Generator] = None):
        if config.num_embed < 1 or config.dim < 1:
            raise DimensionError(name, ">=1", (config.num_embed, config.dim))
        self.name = name
        self.sides = tuple(sides)
        self.config = config
        self.tables: Dict[str, EmbeddingTable] = {}
        self._layout: List[Tuple[str, str, int]] = []   # (side, feature or "", width)
        in_dim = 0
        for side in self.sides:
            dense_dim = schema.dense_dim(side)
            if dense_dim:
                self._layout.append((side, "", dense_dim))
                in_dim += dense_dim
            for spec in schema.sparse(side):
                self.tables[spec.name] = EmbeddingTable(spec.buckets, spec.dim, rng, name=f"{name}.{spec.name}")
                self._layout.append((side, spec.name, spec.dim))
                in_dim += spec.dim
        if in_dim == 0:
            raise DimensionError(name, ">0 input features", 0)
        self.in_dim = in_dim
        self.mlp = MLP([in_dim, *config.hidden, config.out_dim], final_activation="identity",
                       rng=rng, name=f"{name}.mlp")

    @property
    def out_dim(self) -> int:
        return self.config.out_dim

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        for feature, table in self.tables.items():
            params.update(prefixed(f"tables.{feature}", table.parameters()))
        params.update(prefixed("mlp", self.mlp.parameters()))
        return params

    def _inputs(self, batches: Dict[str, TowerBatch], counts: Dict[str, np.ndarray]) -> np.ndarray:
        parts = []
        for side, feature, width in self._layout:
            batch = batches[side]
            if feature == "":
                if batch.dense.shape[1] != width:
                    raise DimensionError(f"{self.name}.{side}.dense", width, batch.dense.shape[1])
                parts.append(batch.dense)
            else:
                if feature not in counts:
                    counts[feature] = self.tables[feature].counts(batch.sparse[feature])
                parts.append(self.tables[feature].pool(counts[feature]))
        return np.concatenate(parts, axis=1)

    def forward(self, batches: Dict[str, TowerBatch], cache: Optional[TowerCache] = None) -> np.ndarray:
        counts = cache.counts if cache is not None else {}
        x = self._inputs(batches, counts)
        if cache is not None:
            cache.batches = batches
        return self.mlp.forward(x, cache.mlp if cache is not None else None)

    def new_cache(self) -> TowerCache:
        return TowerCache(batches={}, counts={})

    def backward(self, cache: TowerCache, grad_out: np.ndarray) -> Dict[str, np.ndarray]:
        grads, grad_in = self.mlp.backward(cache.mlp, grad_out)
        grads = prefixed("mlp", grads)
        offset = 0
        for side, feature, width in self._layout:
            if feature:
                table_grads = self.tables[feature].pool_backward(cache.counts[feature], grad_in[:, offset:offset + width])
                grads.update(prefixed(f"tables.{feature}", table_grads))
            offset += width
        return grads

    def macs(self) -> int:
        return self.mlp.macs()


@dataclass
class HeadCache:
    u: np.ndarray
    e: np.ndarray
    interaction: Optional[np.ndarray] = None
    tower: Optional[TowerCache] = None
    mlp: MLPCache = field(default_factory=MLPCache)


class MoNNHead(Module):
    """
    Interaction tower + over-arch.

    kind="dot" is the two-tower reduction: logit_t = <u, e> + bias_t.
    kind="mlp" runs the over-arch MLP on concat(u, e, interaction embedding).
    """

    def __init__(self, name: str, kind: str, u_dim: int, e_dim: int, num_tasks: int,
                 overarch_hidden: Sequence[int] = (), interaction: Optional[Tower] = None,
                 rng: Optional[np.random.Generator] = None):
        self.name = name
        self.kind = kind
        self.u_dim = u_dim
        self.e_dim = e_dim
        self.num_tasks = num_tasks
        self.interaction = interaction
        self.overarch: Optional[MLP] = None
        if kind == "dot":
            if u_dim != e_dim:
                raise DimensionError(f"{name}.dot", u_dim, e_dim)
            if interaction is not None:
                raise ValueError("a dot-product head has no interaction tower")
            self.task_bias = np.zeros(num_tasks)
        elif kind == "mlp":
            g_dim = interaction.out_dim if interaction is not None else 0
            self.overarch = MLP([u_dim + e_dim + g_dim, *overarch_hidden, num_tasks],
                                final_activation="identity", rng=rng, name=f"{name}.overarch")
        else:
            raise ValueError(f"unknown head kind '{kind}'")

    @property
    def interaction_dim(self) -> int:
        return self.interaction.out_dim if self.interaction is not None else 0

    def parameters(self) -> Dict[str, np.ndarray]:
        if self.kind == "dot":
            return {"task_bias": self.task_bias}
        params = {}
        if self.interaction is not None:
            params.update(prefixed("interaction", self.interaction.parameters()))
        params.update(prefixed("overarch", self.overarch.parameters()))
        return params

    def forward(self, u: np.ndarray, e: np.ndarray, sides: Optional[Dict[str, TowerBatch]] = None,
                cache: Optional[HeadCache] = None) -> np.ndarray:
        if u.shape[1] != self.u_dim:
            raise DimensionError(f"{self.name}.user", self.u_dim, u.shape[1])
        if e.shape[1] != self.e_dim:
            raise DimensionError(f"{self.name}.item", self.e_dim, e.shape[1])
        if cache is not None:
            cache.u, cache.e = u, e
        if self.kind == "dot":
            record_macs(u.shape[0] * self.e_dim)
            return (u * e).sum(axis=1, keepdims=True) + self.task_bias[None, :]
        parts = [u, e]
        if self.interaction is not None:
            tower_cache = self.interaction.new_cache() if cache is not None else None
            g = self.interaction.forward(sides, tower_cache)
            parts.append(g)
            if cache is not None:
                cache.interaction, cache.tower = g, tower_cache
        return self.overarch.forward(np.concatenate(parts, axis=1), cache.mlp if cache is not None else None)

    def new_cache(self) -> HeadCache:
        return HeadCache(u=None, e=None)

    def backward(self, cache: HeadCache, grad_logits: np.ndarray,
                 grad_interaction: Optional[np.ndarray] = None):
        """
        Returns:
            (parameter grads, dLoss/du, dLoss/de)
        """
        if self.kind == "dot":
            g = grad_logits.sum(axis=1, keepdims=True)
            return {"task_bias": grad_logits.sum(axis=0)}, g * cache.e, g * cache.u
        grads, grad_in = self.overarch.backward(cache.mlp, grad_logits)
        grads = prefixed("overarch", grads)
        gu = grad_in[:, :self.u_dim]
        ge = grad_in[:, self.u_dim:self.u_dim + self.e_dim]
        if self.interaction is not None:
            gg = grad_in[:, self.u_dim + self.e_dim:]
            if grad_interaction is not None:
                gg = gg + grad_interaction
            grads.update(prefixed("interaction", self.interaction.backward(cache.tower, gg)))
        return grads, gu, ge

    def macs(self) -> int:
        """Multiply-accumulates for one (user, item-or-node) evaluation."""
        if self.kind == "dot":
            return self.e_dim
        tower = self.interaction.macs() if self.interaction is not None else 0
        return tower + self.overarch.macs()
