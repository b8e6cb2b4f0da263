"""
Inverted-index interaction features (I2IF).

Item attributes are indexed by item id; a user's engaged categories act as
the query, and the hit statistics become dense interaction features.
"""

import logging
from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Tuple

import numpy as np

from src.data.world import ItemCatalog
from src.lib.errors import UnknownItemError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class I2IFIndex:
    """Immutable item_id -> category set map. Rebuilds produce a new instance."""
    postings: Mapping[int, frozenset]

    def __contains__(self, item_id) -> bool:
        return int(item_id) in self.postings

    def __len__(self) -> int:
        return len(self.postings)

    def categories(self, item_id: int) -> frozenset:
        try:
            return self.postings[int(item_id)]
        except KeyError:
            raise UnknownItemError(int(item_id), "I2IF index")


def build_i2if_index(catalog) -> I2IFIndex:
    """
    Index every item's categories.

    Args:
        catalog: ItemCatalog, or an iterable of (item_id, categories) pairs

    Returns:
        I2IFIndex covering every item in ``catalog``
    """
    if isinstance(catalog, ItemCatalog):
        pairs: Iterable[Tuple[int, Iterable[int]]] = zip(catalog.ids, catalog.categories)
    else:
        pairs = catalog
    postings = {int(item_id): frozenset(int(c) for c in cats) for item_id, cats in pairs}
    if not postings:
        raise ValueError("cannot build an I2IF index over an empty catalog")
    logger.debug(f"Built I2IF index over {len(postings)} items")
    return I2IFIndex(MappingProxyType(postings))


def i2if_lookup(index: I2IFIndex, user_categories: Iterable[int], item_id: int) -> np.ndarray:
    """[overlap count, jaccard] between the user's categories and the item's."""
    item_cats = index.categories(item_id)
    user_cats = frozenset(int(c) for c in user_categories)
    overlap = len(user_cats & item_cats)
    union = len(user_cats | item_cats)
    jaccard = overlap / union if union else 0.0
    return np.array([float(overlap), jaccard])


def i2if_intersection(index: I2IFIndex, user_categories: Iterable[int], item_id: int) -> Tuple[int, ...]:
    """Sparse I2IF output: the shared category ids, ascending."""
    item_cats = index.categories(item_id)
    return tuple(sorted(item_cats & frozenset(int(c) for c in user_categories)))


def rebuild_after_churn(index: I2IFIndex, removed: Iterable[int], added: ItemCatalog) -> I2IFIndex:
    """New index with ``removed`` items dropped and ``added`` items indexed."""
    drop = set(int(i) for i in removed)
    pairs = [(item_id, cats) for item_id, cats in index.postings.items() if item_id not in drop]
    pairs.extend(zip(added.ids, added.categories))
    logger.info(f"Rebuilt I2IF index: -{len(drop)} +{len(added)} items")
    return build_i2if_index(pairs)
