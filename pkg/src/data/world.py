"""
Synthetic users and items with planted hierarchical cluster structure.

Items sit around fine centroids (coarse centroid + fine offset) and users
prefer one fine cluster, so the true user/item affinity has a two-level
hierarchy that an index can recover.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.config import WorldConfig, validate_world
from src.lib.errors import UnknownItemError
from src.lib.hashing import array_hash
from src.numerics.functional import sigmoid

logger = logging.getLogger(__name__)

# rng stream offsets so each generation step gets an independent stream
_ITEM_STREAM = 1
_USER_STREAM = 2
_CHURN_STREAM = 3


@dataclass
class ItemCatalog:
    """Live items. Row i describes ``ids[i]``."""
    ids: np.ndarray                     # (V,) int64
    latent: np.ndarray                  # (V, L)
    fine: np.ndarray                    # (V,) planted fine cluster
    categories: List[Tuple[int, ...]]   # sorted category ids per item
    _rows: Dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._rows = {int(item_id): row for row, item_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id) -> bool:
        return int(item_id) in self._rows

    def row(self, item_id: int) -> int:
        try:
            return self._rows[int(item_id)]
        except KeyError:
            raise UnknownItemError(int(item_id), "item catalog")

    def rows(self, item_ids: Sequence[int]) -> np.ndarray:
        return np.asarray([self.row(i) for i in item_ids], dtype=np.int64)

    def fingerprint(self) -> str:
        cats = np.asarray([c for cat in self.categories for c in (*cat, -1)], dtype=np.int64)
        return array_hash(self.ids, self.latent, self.fine, cats)

    def replace(self, removed: Sequence[int], added: "ItemCatalog") -> "ItemCatalog":
        """Return a new catalog without ``removed`` and with ``added`` appended."""
        drop = set(int(i) for i in removed)
        keep = np.asarray([int(i) not in drop for i in self.ids], dtype=bool)
        return ItemCatalog(
            ids=np.concatenate([self.ids[keep], added.ids]),
            latent=np.concatenate([self.latent[keep], added.latent]),
            fine=np.concatenate([self.fine[keep], added.fine]),
            categories=[c for c, k in zip(self.categories, keep) if k] + list(added.categories),
        )


@dataclass
class UserCatalog:
    ids: np.ndarray                      # (U,) int64
    latent: np.ndarray                   # (U, L)
    favorite: np.ndarray                 # (U,) preferred fine cluster
    categories: List[Tuple[int, ...]]    # engaged category ids

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, user_id: int) -> int:
        # user ids are dense 0..U-1
        user_id = int(user_id)
        if not 0 <= user_id < len(self.ids):
            raise KeyError(f"unknown user {user_id}")
        return user_id

    def fingerprint(self) -> str:
        cats = np.asarray([c for cat in self.categories for c in (*cat, -1)], dtype=np.int64)
        return array_hash(self.ids, self.latent, self.favorite, cats)


@dataclass
class World:
    config: WorldConfig
    coarse_centroids: np.ndarray
    fine_centroids: np.ndarray
    items: ItemCatalog
    users: UserCatalog
    task_bias: np.ndarray
    next_item_id: int = 0
    churn_rng: Optional[np.random.Generator] = None

    def __iter__(self) -> Iterator:
        # allows ``items, users = generate_world(cfg)``
        return iter((self.items, self.users))

    @property
    def num_tasks(self) -> int:
        return len(self.task_bias)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def task_biases(base_rates: Sequence[float]) -> np.ndarray:
    """logit(base_rate) per task, with +-inf for degenerate rates."""
    rates = np.asarray(base_rates, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return np.log(rates) - np.log1p(-rates)


def _item_categories(cfg: WorldConfig, fine: int, rng: np.random.Generator) -> Tuple[int, ...]:
    coarse = fine // cfg.fine_per_coarse
    cats = {coarse, cfg.coarse_clusters + fine}
    if cfg.extra_categories > 0:
        cats.add(cfg.coarse_clusters + cfg.num_fine + int(rng.integers(cfg.extra_categories)))
    return tuple(sorted(cats))


def _make_items(cfg: WorldConfig, fine_centroids: np.ndarray, ids: np.ndarray,
                fine: np.ndarray, rng: np.random.Generator) -> ItemCatalog:
    noise = rng.normal(size=(len(ids), cfg.latent_dim))
    latent = fine_centroids[fine] + cfg.noise_scale * noise
    categories = [_item_categories(cfg, int(f), rng) for f in fine]
    return ItemCatalog(ids=ids.astype(np.int64), latent=latent, fine=fine.astype(np.int64), categories=categories)


def generate_world(cfg: WorldConfig) -> World:
    """
    Build the item and user catalogs for a config. Pure function of ``cfg``.

    Items are assigned to fine clusters round-robin (item i -> cluster
    i mod G1*G2), so cluster sizes differ by at most one.
    """
    validate_world(cfg)
    item_rng = _rng(cfg.seed, _ITEM_STREAM)
    user_rng = _rng(cfg.seed, _USER_STREAM)

    coarse = cfg.coarse_scale * item_rng.normal(size=(cfg.coarse_clusters, cfg.latent_dim))
    offsets = cfg.fine_scale * item_rng.normal(size=(cfg.num_fine, cfg.latent_dim))
    fine_centroids = coarse[np.arange(cfg.num_fine) // cfg.fine_per_coarse] + offsets

    ids = np.arange(cfg.num_items, dtype=np.int64)
    fine = ids % cfg.num_fine
    items = _make_items(cfg, fine_centroids, ids, fine, item_rng)

    favorite = user_rng.integers(cfg.num_fine, size=cfg.num_users)
    user_latent = fine_centroids[favorite] + cfg.user_noise * user_rng.normal(size=(cfg.num_users, cfg.latent_dim))
    user_categories = []
    for f in favorite:
        f = int(f)
        cats = {f // cfg.fine_per_coarse, cfg.coarse_clusters + f}
        if cfg.extra_categories > 0:
            cats.add(cfg.coarse_clusters + cfg.num_fine + int(user_rng.integers(cfg.extra_categories)))
        user_categories.append(tuple(sorted(cats)))
    users = UserCatalog(
        ids=np.arange(cfg.num_users, dtype=np.int64),
        latent=user_latent,
        favorite=favorite.astype(np.int64),
        categories=user_categories,
    )

    logger.debug(f"Generated world: {len(items)} items, {len(users)} users, {cfg.num_fine} fine clusters")
    return World(
        config=cfg,
        coarse_centroids=coarse,
        fine_centroids=fine_centroids,
        items=items,
        users=users,
        task_bias=task_biases(cfg.base_rates),
        next_item_id=cfg.num_items,
        churn_rng=_rng(cfg.seed, _CHURN_STREAM),
    )


def affinity(world: World, user_rows: np.ndarray, item_rows: np.ndarray) -> np.ndarray:
    """Scaled latent dot product for aligned (user, item) row pairs."""
    u = world.users.latent[user_rows]
    v = world.items.latent[item_rows]
    return world.config.score_scale * np.einsum("ij,ij->i", u, v) / world.config.latent_dim


def impression_probabilities(world: World, user_rows: np.ndarray, item_rows: np.ndarray) -> np.ndarray:
    """True per-task label probabilities, shape (n, T)."""
    score = affinity(world, user_rows, item_rows)[:, None]
    probs = sigmoid(score + world.task_bias[None, :])
    # base rate 0 / 1 force the task to all-negative / all-positive
    rates = np.asarray(world.config.base_rates)
    probs[:, rates <= 0.0] = 0.0
    probs[:, rates >= 1.0] = 1.0
    return probs


def true_scores(world: World, user_id: int) -> np.ndarray:
    """Affinity of one user against every live item (catalog order)."""
    u = world.users.latent[world.users.row(user_id)]
    return world.config.score_scale * (world.items.latent @ u) / world.config.latent_dim


def relevant_items(world: World, user_id: int, k: int) -> List[int]:
    """Ground-truth top-k item ids under the generator's score; ties by item id."""
    scores = true_scores(world, user_id)
    order = np.lexsort((world.items.ids, -scores))
    return [int(i) for i in world.items.ids[order[:k]]]


def churn_items(world: World, rate: float) -> Tuple[List[int], ItemCatalog]:
    """
    Replace ``rate`` of the live items with freshly generated ones.

    Mutates ``world`` (new catalog, next id) and returns (removed ids, added items).
    """
    cfg = world.config
    rng = world.churn_rng
    count = int(round(rate * len(world.items)))
    if count == 0:
        empty = ItemCatalog(ids=np.zeros(0, dtype=np.int64), latent=np.zeros((0, cfg.latent_dim)),
                            fine=np.zeros(0, dtype=np.int64), categories=[])
        return [], empty
    removed_rows = np.sort(rng.choice(len(world.items), size=count, replace=False))
    removed = [int(i) for i in world.items.ids[removed_rows]]
    new_ids = np.arange(world.next_item_id, world.next_item_id + count, dtype=np.int64)
    fine = new_ids % cfg.num_fine
    added = _make_items(cfg, world.fine_centroids, new_ids, fine, rng)
    world.items = world.items.replace(removed, added)
    world.next_item_id += count
    logger.info(f"Churn: removed {len(removed)} items, added {count} (live={len(world.items)})")
    return removed, added
