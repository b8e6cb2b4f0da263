"""
Inverted index over per-level node ids.

Each level of the published index acts as a separate index term: the node
at level n is a path prefix (k_1, ..., k_n) and its posting list holds every
live item whose path starts with it. Node payloads carry the quantized node
embedding and the representative item whose features stand in for the node.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.data.world import ItemCatalog
from src.features.assemble import TowerBatch, catalog_item_batch
from src.features.i2if import I2IFIndex, build_i2if_index
from src.index.hierarchy import Path, PublishedIndex
from src.lib.errors import StaleIndexError, UnknownItemError
from src.serving.snapshot import ServingSnapshot

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodePayload:
    level: int
    path: Path
    embedding: np.ndarray       # q = sum of codebook rows along the path
    representative: int         # item id
    size: int


@dataclass(frozen=True)
class InvertedIndex:
    """
    Immutable. Churn produces a new instance with ``revision`` + 1 and the
    same ``index_version`` (the codebooks do not change).
    """
    index_version: int
    revision: int
    published: PublishedIndex
    postings: Tuple[Dict[Path, np.ndarray], ...]    # per level, node -> item ids ascending
    nodes: Tuple[Dict[Path, NodePayload], ...]
    children: Tuple[Dict[Path, List[Path]], ...]    # per level, parent prefix -> child nodes sorted
    item_ids: np.ndarray                            # ascending
    items: TowerBatch                               # item-tower inputs aligned with item_ids
    item_embeddings: np.ndarray                     # (V, d) from the snapshot's item tower
    i2if: I2IFIndex

    @property
    def num_levels(self) -> int:
        return len(self.postings)

    def __len__(self) -> int:
        return len(self.item_ids)

    def __contains__(self, item_id) -> bool:
        pos = np.searchsorted(self.item_ids, int(item_id))
        return pos < len(self.item_ids) and self.item_ids[pos] == int(item_id)

    def rows(self, item_ids: Sequence[int]) -> np.ndarray:
        ids = np.asarray(item_ids, dtype=np.int64)
        pos = np.searchsorted(self.item_ids, ids)
        for p, item_id in zip(pos, ids):
            if p >= len(self.item_ids) or self.item_ids[p] != item_id:
                raise UnknownItemError(int(item_id), "inverted index")
        return pos.astype(np.int64)

    def level_nodes(self, level: int) -> List[Path]:
        return sorted(self.nodes[level])

    def expand(self, level: int, parents: Sequence[Path]) -> List[Path]:
        """Nodes at ``level`` under any of ``parents`` (level-1 prefixes), sorted by path."""
        out: List[Path] = []
        for parent in parents:
            out.extend(self.children[level].get(tuple(parent), []))
        return sorted(out)

    def items_under(self, level: int, nodes: Sequence[Path]) -> np.ndarray:
        """Union of posting lists, ascending."""
        lists = [self.postings[level][tuple(p)] for p in nodes]
        if not lists:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(lists))

    def check_partition(self) -> bool:
        """Every level's posting lists are disjoint and cover the live items exactly."""
        for level in range(self.num_levels):
            merged = np.sort(np.concatenate(list(self.postings[level].values()))) if self.postings[level] \
                else np.zeros(0, dtype=np.int64)
            if not np.array_equal(merged, self.item_ids):
                return False
        return True

    def occupancy(self, level: int) -> np.ndarray:
        return np.asarray([len(self.postings[level][p]) for p in self.level_nodes(level)], dtype=np.int64)

    def representative_items(self) -> List[TowerBatch]:
        """Per level, item-tower inputs of every node representative, indexed by node id."""
        return [self.items.take(self.rows(r)) for r in self.published.representatives]


def build_inverted_index(published: PublishedIndex, catalog: ItemCatalog, snapshot: ServingSnapshot,
                         revision: int = 0) -> InvertedIndex:
    """
    Posting lists per level from the published mapping.

    Args:
        published: hard paths for every live item
        catalog: the live items (must match ``published`` exactly)
        snapshot: provides the item tower used to cache item embeddings
        revision: churn revision counter

    Raises:
        StaleIndexError: the published mapping and the catalog disagree
    """
    live = np.sort(np.asarray(catalog.ids, dtype=np.int64))
    if not np.array_equal(live, published.item_ids):
        missing = np.setdiff1d(live, published.item_ids)
        raise StaleIndexError(f"published index v{published.version} does not cover the catalog "
                              f"({len(missing)} live items unmapped)")
    levels = published.num_levels
    ids = published.item_ids
    postings: List[Dict[Path, np.ndarray]] = []
    nodes: List[Dict[Path, NodePayload]] = []
    children: List[Dict[Path, List[Path]]] = []
    for level in range(levels):
        prefixes = published.paths[:, :level + 1]
        unique, inverse = np.unique(prefixes, axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        level_postings: Dict[Path, np.ndarray] = {}
        level_nodes: Dict[Path, NodePayload] = {}
        level_children: Dict[Path, List[Path]] = {}
        reps = published.representatives[level]
        for u, row in enumerate(unique):
            path = tuple(int(k) for k in row)
            members = ids[inverse == u]     # ids ascending, so members are too
            level_postings[path] = members
            level_nodes[path] = NodePayload(level, path, published.node_embedding(path),
                                            int(reps[path[-1]]), len(members))
            level_children.setdefault(path[:-1], []).append(path)
        postings.append(level_postings)
        nodes.append(level_nodes)
        children.append(level_children)

    rows = catalog.rows(ids)
    items = catalog_item_batch(snapshot.schema, catalog, rows)
    inverted = InvertedIndex(
        index_version=published.version,
        revision=revision,
        published=published,
        postings=tuple(postings),
        nodes=tuple(nodes),
        children=tuple(children),
        item_ids=ids,
        items=items,
        item_embeddings=snapshot.catalog_embeddings(catalog)[rows],
        i2if=build_i2if_index(catalog),
    )
    logger.info(f"Built inverted index v{published.version}.{revision}: {len(ids)} items, "
                f"nodes per level {[len(n) for n in nodes]}")
    return inverted


def apply_churn(inverted: InvertedIndex, snapshot: ServingSnapshot, catalog: ItemCatalog) -> InvertedIndex:
    """
    Rebuild after items were added or removed: every live item is mapped
    through the snapshot's item tower into the unchanged codebooks.
    """
    published = snapshot.publish_catalog(catalog)
    added = np.setdiff1d(published.item_ids, inverted.item_ids)
    removed = np.setdiff1d(inverted.item_ids, published.item_ids)
    logger.info(f"Churn rebuild: +{len(added)} -{len(removed)} items")
    return build_inverted_index(published, catalog, snapshot, inverted.revision + 1)
