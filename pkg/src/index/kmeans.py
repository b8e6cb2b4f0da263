"""
Separate Index Learning baseline: Lloyd's k-means with k-means++ seeding.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from src.index.layer import IndexLayer, select_representatives
from src.index.lti import lti_distance, lti_hard_assign

logger = logging.getLogger(__name__)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: List[float] = field(default_factory=list)
    iterations: int = 0


def kmeans_plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """
    k-means++ seeding. When every remaining point coincides with a chosen
    centroid the next unchosen row (lowest index) is taken.
    """
    n = x.shape[0]
    if k > n:
        raise ValueError(f"cannot seed {k} centroids from {n} points")
    chosen = [int(rng.integers(n))]
    closest = lti_distance(x, x[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            taken = set(chosen)
            nxt = next(i for i in range(n) if i not in taken)
        chosen.append(nxt)
        closest = np.minimum(closest, lti_distance(x, x[nxt][None, :])[:, 0])
    return x[chosen].copy()


def kmeans_objective(x: np.ndarray, centroids: np.ndarray, labels: np.ndarray) -> float:
    diff = x - centroids[labels]
    return float(np.einsum("sd,sd->", diff, diff))


def lloyd(x: np.ndarray, centroids: np.ndarray, iters: int) -> KMeansResult:
    """Lloyd iterations from given centroids; an empty cluster keeps its centroid."""
    centroids = np.array(centroids, dtype=np.float64, copy=True)
    labels = lti_hard_assign(lti_distance(x, centroids))
    result = KMeansResult(centroids=centroids, labels=labels,
                          objective=[kmeans_objective(x, centroids, labels)])
    for it in range(iters):
        for j in range(centroids.shape[0]):
            members = labels == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
        new_labels = lti_hard_assign(lti_distance(x, centroids))
        result.objective.append(kmeans_objective(x, centroids, new_labels))
        result.iterations = it + 1
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    result.centroids = centroids
    result.labels = labels
    return result


def kmeans_sil(embeddings: np.ndarray, k: int, iters: int = 50, rng: Optional[np.random.Generator] = None,
               item_ids: Optional[Sequence[int]] = None) -> IndexLayer:
    """
    Cluster item embeddings into a frozen IndexLayer.

    Args:
        embeddings: (V, d) item embeddings
        k: number of nodes
        iters: maximum Lloyd iterations
        rng: seeding generator
        item_ids: ids aligned with ``embeddings`` (defaults to 0..V-1)

    Returns:
        IndexLayer with centroids as node embeddings
    """
    x = np.asarray(embeddings, dtype=np.float64)
    rng = rng or np.random.default_rng(0)
    item_ids = np.arange(len(x), dtype=np.int64) if item_ids is None else np.asarray(item_ids, dtype=np.int64)
    result = lloyd(x, kmeans_plusplus_init(x, k, rng), iters)
    logger.info(f"k-means: K={k}, {result.iterations} iterations, objective {result.objective[-1]:.4f}")
    reps = select_representatives(x, item_ids, result.centroids)
    return IndexLayer.build(result.centroids, item_ids, result.labels, reps)


def residual_kmeans(embeddings: np.ndarray, layer_sizes: Sequence[int], iters: int, rng: np.random.Generator,
                    item_ids: Optional[Sequence[int]] = None) -> List[IndexLayer]:
    """k-means per layer on the residuals left by the coarser layers."""
    residual = np.asarray(embeddings, dtype=np.float64)
    layers = []
    for k in layer_sizes:
        layer = kmeans_sil(residual, k, iters, rng, item_ids)
        layers.append(layer)
        residual = residual - layer.codebook[layer.mapping]
    return layers
