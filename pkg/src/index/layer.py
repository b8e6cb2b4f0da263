from dataclasses import dataclass
from typing import Sequence

import numpy as np

from src.index.lti import lti_distance
from src.lib.errors import DimensionError
from src.lib.hashing import array_hash


def _frozen(array, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class IndexLayer:
    """
    One trained codebook layer: node embeddings, the hard item -> node
    mapping, a representative item per node and the temperature it was
    trained to. Arrays are read-only.
    """
    codebook: np.ndarray            # (K, d)
    item_ids: np.ndarray            # (V,)
    mapping: np.ndarray             # (V,) node per item, aligned with item_ids
    representatives: np.ndarray     # (K,) item id per node
    alpha: float = 0.0

    @classmethod
    def build(cls, codebook, item_ids, mapping, representatives, alpha: float = 0.0) -> "IndexLayer":
        codebook = np.asarray(codebook, dtype=np.float64)
        mapping = np.asarray(mapping, dtype=np.int64)
        if len(mapping) != len(item_ids):
            raise DimensionError("index.mapping", len(item_ids), len(mapping))
        if mapping.size and (mapping.min() < 0 or mapping.max() >= len(codebook)):
            raise ValueError("mapping refers to a node outside the codebook")
        return cls(_frozen(codebook, np.float64), _frozen(item_ids, np.int64), _frozen(mapping, np.int64),
                   _frozen(representatives, np.int64), float(alpha))

    @property
    def num_nodes(self) -> int:
        return self.codebook.shape[0]

    @property
    def dim(self) -> int:
        return self.codebook.shape[1]

    def occupancy(self) -> np.ndarray:
        return np.bincount(self.mapping, minlength=self.num_nodes)

    def fingerprint(self) -> str:
        return array_hash(self.codebook, self.item_ids, self.mapping, self.representatives)


def select_representatives(residuals: np.ndarray, item_ids: Sequence[int], codebook: np.ndarray) -> np.ndarray:
    """
    Representative item per node: the item whose layer input is closest to
    the node embedding, searched over every item whether or not it maps to
    that node. Ties go to the lowest item id.

    Args:
        residuals: (V, d) inputs of this layer (item embeddings, or residuals
                   left by coarser layers)
        item_ids: (V,) ids aligned with ``residuals``
        codebook: (K, d)

    Returns:
        (K,) item ids
    """
    item_ids = np.asarray(item_ids, dtype=np.int64)
    if len(item_ids) == 0:
        raise ValueError("cannot select representatives from an empty catalog")
    d = lti_distance(residuals, codebook)               # (V, K)
    reps = np.empty(codebook.shape[0], dtype=np.int64)
    for k in range(codebook.shape[0]):
        order = np.lexsort((item_ids, d[:, k]))
        reps[k] = item_ids[order[0]]
    return reps
