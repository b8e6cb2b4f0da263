"""
Hierarchical Structured Neural Network.

N MoNN heads of decreasing complexity score the same user against
successively finer granularities: layers 1..N-1 score index nodes (the
quantized vector q_n of an item's path prefix, with the item side of the
interaction tower read from the node's representative item), layer N scores
the item itself. A linear ensemble combines the per-layer, per-task logits.

User and item towers are shared across layers and emit embeddings of the
index dimension; the item embedding also feeds the residual index chain.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.data.world import ItemCatalog
from src.features.assemble import BatchInputs, TowerBatch, catalog_item_batch, pack_tower_batch, unpack_tower_batch
from src.features.schema import FeatureSchema, schema_from_dict
from src.index.hierarchy import HierarchicalIndex, representatives_for
from src.index.lti import BalanceRegState
from src.index.residual import ResidualChain, residual_chain, residual_chain_backward
from src.index.trainer import index_objective
from src.lib.errors import ConfigError, DimensionError, NonFiniteLossError, SnapshotFormatError, StaleIndexError
from src.models.losses import distillation_loss_grad, soft_cross_entropy
from src.models.monn import Prediction
from src.models.presets import Preset, get_preset
from src.models.snapshot_io import load_into, read_snapshot, write_snapshot
from src.models.towers import HeadCache, MoNNHead, Tower, TowerCache, TowerConfig
from src.numerics.layers import Module, prefixed

logger = logging.getLogger(__name__)


def hsnn_layer_preset(name: str, index_dim: int, interaction_dim: int) -> Preset:
    """A size preset with towers resized to the shared index dimension."""
    p = get_preset(name)
    return Preset(
        name=p.name,
        user=TowerConfig(1, index_dim, p.user.hidden),
        item=TowerConfig(1, index_dim, p.item.hidden),
        interaction=TowerConfig(1, interaction_dim, p.interaction.hidden) if p.interaction else None,
        overarch_hidden=p.overarch_hidden,
        head=p.head,
    )


class Ensemble(Module):
    """
    Linear layer over concatenated per-layer logits (N*T -> T), initialised
    to the per-task average of the layers.

    Columns are accumulated one at a time starting from the bias, so every
    row is computed independently of the batch it sits in and partial sums
    over the first n layers are exact prefixes of the full forward.
    """

    def __init__(self, num_layers: int, num_tasks: int):
        self.num_layers = num_layers
        self.num_tasks = num_tasks
        self.weight = np.zeros((num_tasks, num_layers * num_tasks))
        for n in range(num_layers):
            for t in range(num_tasks):
                self.weight[t, n * num_tasks + t] = 1.0 / num_layers
        self.bias = np.zeros(num_tasks)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def start(self, rows: int) -> np.ndarray:
        return np.repeat(self.bias[None, :], rows, axis=0)

    def accumulate(self, partial: np.ndarray, layer_logits: np.ndarray, layer: int) -> np.ndarray:
        T = self.num_tasks
        for t in range(T):
            partial = partial + layer_logits[:, t:t + 1] * self.weight[:, layer * T + t][None, :]
        return partial

    def forward(self, layer_logits: Sequence[np.ndarray]) -> np.ndarray:
        if len(layer_logits) != self.num_layers:
            raise DimensionError("ensemble", self.num_layers, len(layer_logits))
        out = self.start(layer_logits[0].shape[0])
        for n, logits in enumerate(layer_logits):
            out = self.accumulate(out, logits, n)
        return out

    def backward(self, layer_logits: Sequence[np.ndarray], grad_out: np.ndarray):
        x = np.concatenate(layer_logits, axis=1)
        grads = {"weight": grad_out.T @ x, "bias": grad_out.sum(axis=0)}
        grad_x = grad_out @ self.weight
        T = self.num_tasks
        return grads, [grad_x[:, n * T:(n + 1) * T] for n in range(self.num_layers)]


@dataclass
class LayerPrediction:
    logits: List[np.ndarray]            # per layer, (S, T)

    def probs(self, layer: int) -> np.ndarray:
        return Prediction(self.logits[layer]).probs


@dataclass
class HSNNCache:
    users: List[TowerCache] = field(default_factory=list)
    item: Optional[TowerCache] = None


class HSNNModel(Module):
    """
    Args:
        schema: feature schema
        layer_presets: preset per layer, coarse to fine; the last one scores items
        num_tasks: T
        task_weights: w_t
        index: codebooks for layers 1..N-1 (N-1 levels)
        interaction_dim: output size of every interaction tower
        share_user_tower: one user tower for all layers, or one per layer
        rng: initialisation generator
    """

    def __init__(self, schema: FeatureSchema, layer_presets: Sequence[str], num_tasks: int,
                 task_weights: Optional[Sequence[float]], index: HierarchicalIndex,
                 interaction_dim: int = 16, share_user_tower: bool = True,
                 rng: Optional[np.random.Generator] = None):
        if not layer_presets:
            raise ConfigError("model.layer_presets", "need at least one layer")
        if index.num_levels != len(layer_presets) - 1:
            raise ConfigError("index.layer_sizes",
                              f"{len(layer_presets)} layers need {len(layer_presets) - 1} index levels, "
                              f"got {index.num_levels}")
        self.schema = schema
        self.index = index
        self.num_tasks = num_tasks
        self.num_layers = len(layer_presets)
        self.index_dim = index.dim
        self.interaction_dim = interaction_dim
        self.share_user_tower = share_user_tower
        self.task_weights = np.ones(num_tasks) if task_weights is None else np.asarray(task_weights, dtype=np.float64)
        self.presets = [hsnn_layer_preset(p, index.dim, interaction_dim) for p in layer_presets]

        user_presets = self.presets[:1] if share_user_tower else self.presets
        self.user_towers = [Tower("user", schema, ["user"], p.user, rng) for p in user_presets]
        self.item_tower = Tower("item", schema, ["item"], self.presets[0].item, rng)
        self.heads: List[MoNNHead] = []
        for n, p in enumerate(self.presets):
            interaction = None
            if p.interaction is not None:
                sides = ["user", "item", "interaction"] if n == self.num_layers - 1 else ["user", "item"]
                interaction = Tower(f"layer{n}.interaction", schema, sides, p.interaction, rng)
            self.heads.append(MoNNHead(f"layer{n}.overarch", p.head, index.dim, index.dim, num_tasks,
                                       p.overarch_hidden, interaction, rng))
        self.ensemble = Ensemble(self.num_layers, num_tasks)
        self.calibration = np.zeros((self.num_layers, num_tasks))
        self.calibrated = False
        self.step = 0
        # per level: (K_n,) representative item ids and their item-side inputs
        self.representatives: Optional[List[np.ndarray]] = None
        self.representative_items: Optional[List[TowerBatch]] = None

    @property
    def item_layer(self) -> int:
        return self.num_layers - 1

    def set_representatives(self, rep_ids: Sequence[np.ndarray], items: Sequence[TowerBatch]):
        """
        Raises:
            StaleIndexError: the lists do not match the index levels
        """
        if len(rep_ids) != self.index.num_levels or len(items) != self.index.num_levels:
            raise StaleIndexError(f"{len(rep_ids)} representative levels for {self.index.num_levels} index levels")
        for level, (ids, batch, k) in enumerate(zip(rep_ids, items, self.index.layer_sizes)):
            if len(ids) != k or len(batch) != k:
                raise StaleIndexError(f"level {level} has {len(ids)} representatives for {k} nodes")
        self.representatives = [np.asarray(r, dtype=np.int64) for r in rep_ids]
        self.representative_items = list(items)

    def catalog_embeddings(self, catalog: ItemCatalog, chunk: int = 4096) -> np.ndarray:
        parts = []
        for start in range(0, len(catalog), chunk):
            rows = range(start, min(start + chunk, len(catalog)))
            parts.append(self.item_embeddings(catalog_item_batch(self.schema, catalog, rows)))
        return np.concatenate(parts, axis=0) if parts else np.zeros((0, self.index_dim))

    def refresh_representatives(self, catalog: ItemCatalog, v: Optional[np.ndarray] = None):
        """Re-select representatives against the current codebooks and item tower."""
        if self.index.num_levels == 0:
            self.set_representatives([], [])
            return
        if v is None:
            v = self.catalog_embeddings(catalog)
        reps = representatives_for(self.index.codebooks, catalog.ids, v)
        self.set_representatives(reps, representative_items(self.schema, catalog, reps))

    def node_sides(self, paths: np.ndarray) -> List[TowerBatch]:
        """Item-side inputs of each example's node representative, one batch per level."""
        if self.index.num_levels and self.representative_items is None:
            raise StaleIndexError("no node representatives; refresh them after the index changes")
        paths = np.asarray(paths, dtype=np.int64).reshape(-1, self.index.num_levels)
        return [self.representative_items[n].take(paths[:, n]) for n in range(self.index.num_levels)]

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        if self.share_user_tower:
            params.update(prefixed("user_tower", self.user_towers[0].parameters()))
        else:
            for n, tower in enumerate(self.user_towers):
                params.update(prefixed(f"user_tower.{n}", tower.parameters()))
        params.update(prefixed("item_tower", self.item_tower.parameters()))
        for n, head in enumerate(self.heads):
            params.update(prefixed(f"heads.{n}", head.parameters()))
        params.update(prefixed("ensemble", self.ensemble.parameters()))
        return params

    def user_embeddings(self, user: TowerBatch, caches: Optional[List[TowerCache]] = None) -> List[np.ndarray]:
        """One user embedding per layer (the same array when the tower is shared)."""
        out = []
        for i, tower in enumerate(self.user_towers):
            out.append(tower.forward({"user": user}, caches[i] if caches is not None else None))
        if self.share_user_tower:
            return out * self.num_layers
        return out

    def item_embeddings(self, item: TowerBatch, cache: Optional[TowerCache] = None) -> np.ndarray:
        return self.item_tower.forward({"item": item}, cache)

    def node_embeddings(self, paths: np.ndarray) -> List[np.ndarray]:
        """Hard q_n for n = 1..N-1 given (S, N-1) paths."""
        paths = np.asarray(paths, dtype=np.int64).reshape(-1, self.index.num_levels)
        if paths.size and paths.min() < 0:
            raise StaleIndexError("an item has no node assignment")
        q = np.zeros((paths.shape[0], self.index_dim))
        out = []
        for level, codebook in enumerate(self.index.codebooks):
            if paths.size and paths[:, level].max() >= codebook.shape[0]:
                raise StaleIndexError(f"node id outside level {level} codebook")
            q = q + codebook[paths[:, level]]
            out.append(q)
        return out

    def layer_sides(self, layer: int, batch_user: TowerBatch, batch_item: TowerBatch,
                    interaction: Optional[TowerBatch]) -> Dict[str, TowerBatch]:
        sides = {"user": batch_user, "item": batch_item}
        if layer == self.item_layer and interaction is not None:
            sides["interaction"] = interaction
        return sides

    def score_layer(self, layer: int, u: np.ndarray, e: np.ndarray, sides: Dict[str, TowerBatch],
                    cache: Optional[HeadCache] = None) -> np.ndarray:
        """Calibrated logits of one layer's head."""
        return self.heads[layer].forward(u, e, sides, cache) + self.calibration[layer][None, :]

    def macs_per_layer(self) -> List[int]:
        return [head.macs() for head in self.heads]


def representative_items(schema: FeatureSchema, catalog: ItemCatalog, rep_ids: Sequence[np.ndarray]) -> List[TowerBatch]:
    return [catalog_item_batch(schema, catalog, catalog.rows(r)) for r in rep_ids]


def hsnn_forward(model: HSNNModel, batch: BatchInputs, paths: Optional[np.ndarray] = None,
                 representatives: Optional[Sequence[TowerBatch]] = None):
    """
    Forward with hard node assignments. Index layers read the item side of
    the node's representative, never the example's own item.

    Args:
        model: HSNN
        batch: assembled inputs
        paths: (S, N-1) node ids per example; required when N > 1
        representatives: per level, item inputs of each node's representative;
                         defaults to the model's own

    Returns:
        (LayerPrediction, ensembled Prediction)

    Raises:
        StaleIndexError: an assignment or the representatives are missing
    """
    u = model.user_embeddings(batch.user)
    v = model.item_embeddings(batch.item)
    if model.num_layers > 1:
        if paths is None:
            raise StaleIndexError("node assignments are required for index layers")
        nodes = model.node_embeddings(paths)
        if len(nodes[0]) != len(batch):
            raise StaleIndexError(f"{len(nodes[0])} assignments for {len(batch)} examples")
        if representatives is None:
            rep_sides = model.node_sides(paths)
        else:
            paths = np.asarray(paths, dtype=np.int64).reshape(-1, model.index.num_levels)
            rep_sides = [r.take(paths[:, n]) for n, r in enumerate(representatives)]
    else:
        nodes, rep_sides = [], []
    logits = []
    for n in range(model.num_layers):
        if n < model.item_layer:
            e, item_side = nodes[n], rep_sides[n]
        else:
            e, item_side = v, batch.item
        sides = model.layer_sides(n, batch.user, item_side, batch.interaction)
        logits.append(model.score_layer(n, u[n], e, sides))
    return LayerPrediction(logits), Prediction(model.ensemble.forward(logits))


def assign_batch(model: HSNNModel, batch: BatchInputs) -> np.ndarray:
    """Paths for a batch from the model's index (frozen mapping or argmin)."""
    v = model.item_embeddings(batch.item)
    return model.index.paths_for(batch.item_ids, v)


def predict_hsnn(model: HSNNModel, batch: BatchInputs):
    return hsnn_forward(model, batch, assign_batch(model, batch) if model.num_layers > 1 else None)


def hsnn_loss(layer_preds: LayerPrediction, labels: np.ndarray, weights: Sequence[float]):
    """
    Sum over layers of the multi-task cross-entropy.

    Returns:
        (loss, [dLoss/dlogits per layer])
    """
    total = 0.0
    grads = []
    for logits in layer_preds.logits:
        loss, grad = soft_cross_entropy(logits, labels, weights)
        total += loss
        grads.append(grad)
    return total, grads


def interaction_tower_distill(item_level: np.ndarray, index_level: np.ndarray):
    """
    Mean squared difference between interaction embeddings. The item-level
    embedding is a fixed target.

    Returns:
        (loss, dLoss/d index_level)
    """
    if item_level.shape != index_level.shape:
        raise DimensionError("interaction_distill", item_level.shape, index_level.shape)
    diff = index_level - item_level
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class ObjectiveWeights:
    ensemble: float = 1.0
    mse: float = 0.1
    distill: float = 0.0
    index: float = 0.0
    balance: float = 0.0
    recon: float = 0.0
    index_task: int = 0


@dataclass
class ObjectiveResult:
    terms: Dict[str, float]
    grads: Dict[str, np.ndarray]
    chain: Optional[ResidualChain] = None
    layer_logits: List[np.ndarray] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(self.terms.values()))


_warned_no_mse = set()


def _add(a: Optional[np.ndarray], b: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if a is None:
        return b
    return a if b is None else a + b


def hsnn_objective(model: HSNNModel, batch: BatchInputs, weights: ObjectiveWeights, alpha: float = 0.0,
                   soft: bool = True, balance_states: Optional[List[BalanceRegState]] = None,
                   teacher_probs: Optional[np.ndarray] = None, active_layers: Optional[Sequence[int]] = None,
                   step: int = 0) -> ObjectiveResult:
    """
    Joint loss and gradients for one minibatch.

    ``soft`` routes index layers through the soft residual chain so gradients
    reach the codebooks and the item tower; otherwise node embeddings come
    from hard paths and the codebooks receive nothing. ``active_layers``
    restricts the supervised terms (and forward work) to some layers; the
    ensemble and the index terms need every layer active.
    """
    N = model.num_layers
    active = list(range(N)) if active_layers is None else sorted(active_layers)
    everything = len(active) == N
    cache = HSNNCache(users=[t.new_cache() for t in model.user_towers], item=model.item_tower.new_cache())
    u = model.user_embeddings(batch.user, cache.users)
    v = model.item_embeddings(batch.item, cache.item)

    nodes: List[np.ndarray] = []
    rep_sides: List[TowerBatch] = []
    chain = None
    if N > 1 and any(n < model.item_layer for n in active):
        if soft:
            chain = residual_chain(v, model.index.codebooks, alpha)
            nodes = chain.q
            paths = np.stack(chain.codes, axis=1)
        else:
            paths = model.index.paths_for(batch.item_ids, v)
            nodes = model.node_embeddings(paths)
        rep_sides = model.node_sides(paths)

    layer_logits: Dict[int, np.ndarray] = {}
    head_caches: Dict[int, HeadCache] = {}
    for n in active:
        head_caches[n] = model.heads[n].new_cache()
        if n < model.item_layer:
            e, item_side = nodes[n], rep_sides[n]
        else:
            e, item_side = v, batch.item
        sides = model.layer_sides(n, batch.user, item_side, batch.interaction)
        layer_logits[n] = model.score_layer(n, u[n], e, sides, head_caches[n])

    terms: Dict[str, float] = {}
    grad_logits: Dict[int, np.ndarray] = {}
    total = 0.0
    for n in active:
        loss, grad = soft_cross_entropy(layer_logits[n], batch.labels, model.task_weights)
        total += loss
        grad_logits[n] = grad
    terms["layers"] = total

    grads: Dict[str, np.ndarray] = {}
    if everything and weights.ensemble != 0.0:
        ordered = [layer_logits[n] for n in range(N)]
        final = model.ensemble.forward(ordered)
        loss, grad_final = soft_cross_entropy(final, batch.labels, model.task_weights)
        terms["ensemble"] = weights.ensemble * loss
        ens_grads, per_layer = model.ensemble.backward(ordered, weights.ensemble * grad_final)
        grads.update(prefixed("ensemble", ens_grads))
        for n in range(N):
            grad_logits[n] = grad_logits[n] + per_layer[n]

    item_layer = model.item_layer
    if teacher_probs is not None and weights.distill != 0.0 and item_layer in layer_logits:
        loss, grad = distillation_loss_grad(layer_logits[item_layer], teacher_probs)
        terms["distill"] = weights.distill * loss
        grad_logits[item_layer] = grad_logits[item_layer] + weights.distill * grad

    grad_interaction: Dict[int, np.ndarray] = {}
    if weights.mse != 0.0 and N > 1 and item_layer in head_caches:
        target = head_caches[item_layer].interaction
        if target is None:
            if id(model) not in _warned_no_mse:
                logger.info("Item layer has no interaction tower; skipping interaction distillation")
                _warned_no_mse.add(id(model))
        else:
            total = 0.0
            for n in active:
                g = head_caches[n].interaction
                if n == item_layer or g is None:
                    continue
                loss, grad = interaction_tower_distill(target, g)
                total += loss
                grad_interaction[n] = weights.mse * grad
            if grad_interaction:
                terms["mse"] = weights.mse * total

    grad_u = [np.zeros_like(x) for x in u] if not model.share_user_tower else [np.zeros_like(u[0])]
    grad_nodes: List[Optional[np.ndarray]] = [None] * max(N - 1, 0)
    grad_v = None
    for n in active:
        head_grads, gu, ge = model.heads[n].backward(head_caches[n], grad_logits[n], grad_interaction.get(n))
        grads.update(prefixed(f"heads.{n}", head_grads))
        slot = 0 if model.share_user_tower else n
        grad_u[slot] = grad_u[slot] + gu
        if n == item_layer:
            grad_v = ge
        else:
            grad_nodes[n] = ge

    if chain is not None:
        idx = index_objective(chain, u[0], batch.labels[:, weights.index_task], weights.index,
                              weights.balance, balance_states, weights.recon)
        terms.update(idx.terms)
        if idx.grad_u is not None:
            grad_u[0] = grad_u[0] + idx.grad_u
        grad_q = [_add(a, b) for a, b in zip(grad_nodes, idx.grad_q)]
        gv_chain, grad_c = residual_chain_backward(chain, model.index.codebooks, grad_q, idx.grad_a, idx.recon_weight)
        grad_v = gv_chain if grad_v is None else grad_v + gv_chain
        for level, g in enumerate(grad_c):
            grads[f"codebook.{level}"] = g

    for name, value in terms.items():
        if not np.isfinite(value):
            raise NonFiniteLossError(name, step, value, {"alpha": alpha, "batch_size": len(batch)})

    if grad_v is not None:
        grads.update(prefixed("item_tower", model.item_tower.backward(cache.item, grad_v)))
    if model.share_user_tower:
        grads.update(prefixed("user_tower", model.user_towers[0].backward(cache.users[0], grad_u[0])))
    else:
        for n, tower in enumerate(model.user_towers):
            if n in layer_logits or n == 0:
                grads.update(prefixed(f"user_tower.{n}", tower.backward(cache.users[n], grad_u[n])))
    return ObjectiveResult(terms=terms, grads=grads, chain=chain,
                           layer_logits=[layer_logits[n] for n in active])


def save_hsnn(model: HSNNModel, directory: str, kind: str = "hsnn", manifest: Optional[dict] = None) -> str:
    """Parameters plus codebooks and calibration; the manifest carries everything needed to rebuild."""
    body = {
        "layer_presets": [p.name for p in model.presets],
        "layer_sizes": model.index.layer_sizes,
        "index_dim": model.index_dim,
        "interaction_dim": model.interaction_dim,
        "share_user_tower": model.share_user_tower,
        "num_tasks": model.num_tasks,
        "task_weights": model.task_weights.tolist(),
        "schema_hash": model.schema.schema_hash(),
        "schema": model.schema.to_dict(),
        "step": model.step,
        "calibrated": model.calibrated,
        "index_version": model.index.version,
        **(manifest or {}),
    }
    extras = {f"codebook.{n}": c for n, c in enumerate(model.index.codebooks)}
    extras["calibration"] = model.calibration
    if model.representatives is not None:
        for n, (ids, items) in enumerate(zip(model.representatives, model.representative_items)):
            extras[f"representatives.{n}.ids"] = ids.astype(np.float64)
            extras.update(pack_tower_batch(items, f"representatives.{n}"))
    return write_snapshot(directory, kind, model, body, extras)


def load_hsnn(directory: str, kind: str = "hsnn"):
    """
    Returns:
        (HSNNModel, manifest)

    Raises:
        SnapshotFormatError: unreadable manifest, schema hash mismatch or missing tensors
    """
    manifest, params, extras = read_snapshot(directory, kind)
    try:
        schema = schema_from_dict(manifest["schema"])
        if schema.schema_hash() != manifest["schema_hash"]:
            raise SnapshotFormatError(f"{directory}: schema hash mismatch")
        sizes = manifest["layer_sizes"]
        codebooks = [extras[f"codebook.{n}"] for n in range(len(sizes))]
        index = HierarchicalIndex(sizes, manifest["index_dim"], codebooks)
        index.version = int(manifest["index_version"])
        model = HSNNModel(schema, manifest["layer_presets"], manifest["num_tasks"], manifest["task_weights"],
                          index, manifest["interaction_dim"], manifest["share_user_tower"])
        model.calibration[...] = extras["calibration"]
        if "representatives.0.ids" in extras:
            names = [spec.name for spec in schema.sparse("item")]
            model.set_representatives(
                [extras[f"representatives.{n}.ids"].astype(np.int64) for n in range(len(sizes))],
                [unpack_tower_batch(extras, f"representatives.{n}", names) for n in range(len(sizes))],
            )
    except KeyError as e:
        raise SnapshotFormatError(f"{directory}: missing {e.args[0]}")
    load_into(model, params, directory)
    model.calibrated = bool(manifest["calibrated"])
    model.step = int(manifest["step"])
    return model, manifest
