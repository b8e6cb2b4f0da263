"""
Hierarchical index: ordered codebook layers (coarse to fine) over a shared
embedding space, plus the published hard mapping used for serving.

A node at level n is the path prefix (k_1, ..., k_n). Its embedding is the
quantized vector sum_{t <= n} c_{t, k_t}.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.index.kmeans import kmeans_plusplus_init
from src.index.lti import lti_distance, lti_hard_assign
from src.index.layer import IndexLayer, _frozen, select_representatives
from src.index.residual import residual_chain
from src.lib.errors import DimensionError, UnknownItemError
from src.lib.hashing import array_hash

logger = logging.getLogger(__name__)

Path = Tuple[int, ...]


@dataclass(frozen=True)
class PublishedIndex:
    """Immutable snapshot of codebooks and the hard item paths computed from them."""
    version: int
    codebooks: Tuple[np.ndarray, ...]
    item_ids: np.ndarray                    # ascending
    paths: np.ndarray                       # (V, L) node id per level
    representatives: Tuple[np.ndarray, ...] # per level, (K_n,) item ids

    @property
    def num_levels(self) -> int:
        return len(self.codebooks)

    @property
    def dim(self) -> int:
        return self.codebooks[0].shape[1] if self.codebooks else 0

    def layers(self) -> List[IndexLayer]:
        return [IndexLayer.build(c, self.item_ids, self.paths[:, n], self.representatives[n])
                for n, c in enumerate(self.codebooks)]

    def path_of(self, item_id: int) -> Path:
        pos = np.searchsorted(self.item_ids, item_id)
        if pos >= len(self.item_ids) or self.item_ids[pos] != item_id:
            raise UnknownItemError(int(item_id), "published index")
        return tuple(int(k) for k in self.paths[pos])

    def mapping(self) -> Dict[int, Path]:
        return {int(i): tuple(int(k) for k in p) for i, p in zip(self.item_ids, self.paths)}

    def node_embedding(self, path: Path) -> np.ndarray:
        q = np.zeros(self.dim)
        for level, k in enumerate(path):
            q = q + self.codebooks[level][k]
        return q

    def fingerprint(self) -> str:
        return array_hash(*self.codebooks, self.item_ids, self.paths, *self.representatives)


def hard_paths(codebooks: Sequence[np.ndarray], v: np.ndarray) -> np.ndarray:
    """(V, L) argmin codes of the hard residual chain."""
    v = np.atleast_2d(v)
    if not codebooks:
        return np.zeros((len(v), 0), dtype=np.int64)
    chain = residual_chain(v, codebooks, hard=True)
    return np.stack(chain.codes, axis=1).astype(np.int64)


def representatives_for(codebooks: Sequence[np.ndarray], item_ids: Sequence[int], v: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Representative item ids per level for the current codebooks (hard residual inputs)."""
    item_ids = np.asarray(item_ids, dtype=np.int64)
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if len(item_ids) != len(v):
        raise DimensionError("index.representatives", len(item_ids), len(v))
    if not codebooks:
        return ()
    chain = residual_chain(v, codebooks, hard=True)
    return tuple(select_representatives(chain.residuals[n], item_ids, c) for n, c in enumerate(codebooks))


def publish_mapping(codebooks: Sequence[np.ndarray], item_ids: Sequence[int], v: np.ndarray,
                    version: int) -> PublishedIndex:
    """
    Hard paths for every item and one representative per node and level,
    selected on that level's hard residual input.
    """
    item_ids = np.asarray(item_ids, dtype=np.int64)
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if len(item_ids) != len(v):
        raise DimensionError("index.publish", len(item_ids), len(v))
    order = np.argsort(item_ids, kind="stable")
    item_ids, v = item_ids[order], v[order]
    chain = residual_chain(v, codebooks, hard=True)
    paths = np.stack(chain.codes, axis=1).astype(np.int64) if codebooks else np.zeros((len(v), 0), dtype=np.int64)
    reps = tuple(_frozen(select_representatives(chain.residuals[n], item_ids, c), np.int64)
                 for n, c in enumerate(codebooks))
    return PublishedIndex(
        version=version,
        codebooks=tuple(_frozen(c, np.float64) for c in codebooks),
        item_ids=_frozen(item_ids, np.int64),
        paths=_frozen(paths, np.int64),
        representatives=reps,
    )


class HierarchicalIndex:
    """
    Trainable codebooks. Training mutates ``codebooks`` in place;
    ``publish`` freezes them into a PublishedIndex with a new version.

    Args:
        layer_sizes: K_n per level, coarse to fine
        dim: embedding dimension d
    """

    def __init__(self, layer_sizes: Sequence[int], dim: int, codebooks: Optional[List[np.ndarray]] = None):
        self.layer_sizes = [int(k) for k in layer_sizes]
        self.dim = dim
        if codebooks is None:
            codebooks = [np.zeros((k, dim)) for k in self.layer_sizes]
        for n, (k, c) in enumerate(zip(self.layer_sizes, codebooks)):
            if c.shape != (k, dim):
                raise DimensionError(f"index.layer{n}", (k, dim), c.shape)
        self.codebooks: List[np.ndarray] = [np.array(c, dtype=np.float64) for c in codebooks]
        self.version = 0
        self.published: Optional[PublishedIndex] = None
        # SIL / EM keep the mapping fixed between re-clusterings
        self.frozen_paths: Optional[Dict[int, Path]] = None

    @property
    def num_levels(self) -> int:
        return len(self.layer_sizes)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"codebook.{n}": c for n, c in enumerate(self.codebooks)}

    def init_from_embeddings(self, v: np.ndarray, rng: np.random.Generator):
        """Seed each level with k-means++ picks from the hard residuals of the previous levels."""
        residual = np.atleast_2d(np.asarray(v, dtype=np.float64))
        for n, k in enumerate(self.layer_sizes):
            if k > len(residual):
                raise ValueError(f"level {n} has K={k} but only {len(residual)} items to seed from")
            self.codebooks[n][...] = kmeans_plusplus_init(residual, k, rng)
            codes = lti_hard_assign(lti_distance(residual, self.codebooks[n]))
            residual = residual - self.codebooks[n][codes]
        logger.debug(f"Seeded {self.num_levels} index levels from {len(residual)} embeddings")

    def set_layers(self, layers: Sequence[IndexLayer]):
        """Replace codebooks and freeze the mapping (k-means / EM)."""
        for n, layer in enumerate(layers):
            if layer.codebook.shape != self.codebooks[n].shape:
                raise DimensionError(f"index.layer{n}", self.codebooks[n].shape, layer.codebook.shape)
            self.codebooks[n][...] = layer.codebook
        ids = layers[0].item_ids if layers else np.zeros(0, dtype=np.int64)
        paths = np.stack([layer.mapping for layer in layers], axis=1) if layers else np.zeros((len(ids), 0))
        self.frozen_paths = {int(i): tuple(int(k) for k in p) for i, p in zip(ids, paths)}

    def paths_for(self, item_ids: Sequence[int], v: np.ndarray) -> np.ndarray:
        """Frozen paths when set (unknown items fall back to argmin), else argmin codes."""
        codes = hard_paths(self.codebooks, v)
        if self.frozen_paths is not None:
            for row, item_id in enumerate(item_ids):
                path = self.frozen_paths.get(int(item_id))
                if path is not None:
                    codes[row] = path
        return codes

    def publish(self, item_ids: Sequence[int], v: np.ndarray) -> PublishedIndex:
        self.version += 1
        published = publish_mapping(self.codebooks, item_ids, v, self.version)
        self.published = published
        peak = [np.bincount(published.paths[:, n], minlength=k).max() for n, k in enumerate(self.layer_sizes)]
        logger.info(f"Published index v{self.version}: {len(published.item_ids)} items, max occupancy {peak}")
        return published

    def fingerprint(self) -> str:
        return array_hash(*self.codebooks)


def occupancy(paths: np.ndarray, level: int, num_nodes: int) -> np.ndarray:
    return np.bincount(paths[:, level], minlength=num_nodes)


def occupancy_ratio(paths: np.ndarray, level: int, num_nodes: int) -> float:
    """max/mean items per node of the level's codebook."""
    counts = occupancy(paths, level, num_nodes)
    if counts.sum() == 0:
        return 0.0
    return float(counts.max() / counts.mean())
