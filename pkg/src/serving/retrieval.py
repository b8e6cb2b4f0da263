"""
Layer-wise retrieval over the inverted index.

For each index level the children of the surviving nodes are scored with
that layer's head (node embedding plus representative-item features), the
logits are added into the running ensemble, and the best ``beam[n]`` nodes
survive. The item layer then scores only items in surviving postings.

Ranking uses the task-weighted ensemble, sum_t w_t * logit_t. Ties go to
the lower node path or item id.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.data.world import World
from src.features.assemble import SideInput, catalog_user_input, pair_interaction_batch, repeat_side
from src.index.hierarchy import Path
from src.lib.errors import ConfigError, VersionSkewError
from src.numerics.layers import metered
from src.serving.cost import CostCounter, counter_for
from src.serving.inverted_index import InvertedIndex
from src.serving.snapshot import ServingSnapshot

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RetrievalBudget:
    beam: Tuple[int, ...]           # surviving nodes per index level
    max_items_scored: Optional[int] = None    # None = unlimited
    top_k: int = 100

    def __post_init__(self):
        if any(b < 1 for b in self.beam):
            raise ConfigError("serving.beam", "beam widths must be >= 1")
        if self.max_items_scored is not None and self.max_items_scored < 0:
            raise ConfigError("serving.max_items_scored", "must be >= 0")
        if self.top_k < 0:
            raise ConfigError("serving.top_k", "must be >= 0")

    @classmethod
    def exhaustive(cls, inverted: InvertedIndex, top_k: int) -> "RetrievalBudget":
        return cls(beam=tuple(max(1, len(n)) for n in inverted.nodes), top_k=top_k)


@dataclass
class UserRequest:
    user_id: int
    user: SideInput
    query: Dict[str, List[int]]     # interaction query features (engaged categories)


def user_request(snapshot: ServingSnapshot, world: World, user_id: int) -> UserRequest:
    side, query = catalog_user_input(snapshot.schema, world, user_id)
    return UserRequest(user_id=int(user_id), user=side, query=query)


@dataclass
class RetrievalResult:
    user_id: int
    item_ids: np.ndarray
    scores: np.ndarray
    cost: CostCounter
    survivors: List[List[Path]] = field(default_factory=list)

    def lines(self) -> Iterator[Tuple[int, int, int, float]]:
        """(user_id, rank, item_id, score), rank starting at 1."""
        for rank, (item_id, score) in enumerate(zip(self.item_ids, self.scores), start=1):
            yield self.user_id, rank, int(item_id), float(score)


def check_versions(snapshot: ServingSnapshot, inverted: InvertedIndex):
    if snapshot.index_version != inverted.index_version:
        raise VersionSkewError(snapshot.index_version, inverted.index_version)


def ranking_score(snapshot: ServingSnapshot, logits: np.ndarray) -> np.ndarray:
    w = snapshot.model.task_weights
    score = np.zeros(logits.shape[0])
    for t in range(logits.shape[1]):
        score = score + w[t] * logits[:, t]
    return score


def top_rows(scores: np.ndarray, keys: Sequence, k: int) -> List[int]:
    """Indices of the best ``k`` scores, descending, ties by ascending key."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], keys[i]))
    return order[:k]


class _Scorer:
    """Scores nodes and items for one request, keeping the running ensemble per node."""

    def __init__(self, snapshot: ServingSnapshot, inverted: InvertedIndex, request: UserRequest):
        self.snapshot = snapshot
        self.inverted = inverted
        self.request = request
        self.model = snapshot.model
        self.cost = counter_for(self.model)
        user = repeat_side(request.user, 1)
        self.u = self.model.user_embeddings(user)
        self.partial: Dict[Path, np.ndarray] = {(): self.model.ensemble.start(1)[0]}

    def nodes(self, level: int, paths: List[Path]) -> np.ndarray:
        """Ranking scores of ``paths`` (sorted) at ``level``; records their partial ensembles."""
        if not paths:
            return np.zeros(0)
        model, inverted = self.model, self.inverted
        payloads = [inverted.nodes[level][p] for p in paths]
        rows = inverted.rows([p.representative for p in payloads])
        q = np.stack([p.embedding for p in payloads])
        user = repeat_side(self.request.user, len(paths))
        sides = model.layer_sides(level, user, inverted.items.take(rows), None)
        u = np.repeat(self.u[level], len(paths), axis=0)
        with metered() as meter:
            logits = model.score_layer(level, u, q, sides)
        parents = np.stack([self.partial[p[:-1]] for p in paths])
        partial = model.ensemble.accumulate(parents, logits, level)
        for p, row in zip(paths, partial):
            self.partial[p] = row
        self.cost.add(level, len(paths), meter.macs)
        return ranking_score(self.snapshot, partial)

    def items(self, item_ids: np.ndarray) -> np.ndarray:
        """Ranking scores of ``item_ids`` (ascending) under the full ensemble."""
        if len(item_ids) == 0:
            return np.zeros(0)
        model, inverted = self.model, self.inverted
        layer = model.item_layer
        rows = inverted.rows(item_ids)
        user = repeat_side(self.request.user, len(rows))
        interaction = pair_interaction_batch(self.snapshot.schema, self.request.query, item_ids, inverted.i2if)
        sides = model.layer_sides(layer, user, inverted.items.take(rows), interaction)
        u = np.repeat(self.u[layer], len(rows), axis=0)
        with metered() as meter:
            logits = model.score_layer(layer, u, inverted.item_embeddings[rows], sides)
        paths = inverted.published.paths[rows]
        parents = np.stack([self.partial[tuple(int(k) for k in p)] for p in paths])
        final = model.ensemble.accumulate(parents, logits, layer)
        self.cost.add(layer, len(rows), meter.macs)
        return ranking_score(self.snapshot, final)


def _rank(user_id: int, item_ids: np.ndarray, scores: np.ndarray, top_k: int, cost: CostCounter,
          survivors: List[List[Path]]) -> RetrievalResult:
    keep = top_rows(scores, item_ids, top_k)
    return RetrievalResult(user_id, item_ids[keep], scores[keep], cost, survivors)


def retrieve_layerwise(snapshot: ServingSnapshot, inverted: InvertedIndex, request: UserRequest,
                       budget: RetrievalBudget) -> RetrievalResult:
    """
    Beam retrieval down the hierarchy.

    With ``max_items_scored`` set, candidate items are taken from the best
    surviving nodes first until the budget is reached.

    Raises:
        VersionSkewError: snapshot and inverted index disagree on the index version
        ConfigError: the budget has the wrong number of beam widths
    """
    check_versions(snapshot, inverted)
    if len(budget.beam) != inverted.num_levels:
        raise ConfigError("serving.beam", f"need {inverted.num_levels} beam widths, got {len(budget.beam)}")
    scorer = _Scorer(snapshot, inverted, request)
    survivors: List[List[Path]] = []
    parents: List[Path] = [()]
    for level in range(inverted.num_levels):
        candidates = inverted.expand(level, parents)
        scores = scorer.nodes(level, candidates)
        parents = [candidates[i] for i in top_rows(scores, candidates, budget.beam[level])]
        survivors.append(parents)
    if inverted.num_levels == 0:
        item_ids = inverted.item_ids
    elif budget.max_items_scored is not None:
        item_ids = _budgeted(inverted, parents, budget.max_items_scored)
    else:
        item_ids = inverted.items_under(inverted.num_levels - 1, parents)
    scores = scorer.items(item_ids)
    logger.debug(f"user {request.user_id}: scored {len(item_ids)} items, survivors {[len(s) for s in survivors]}")
    return _rank(request.user_id, item_ids, scores, budget.top_k, scorer.cost, survivors)


def _budgeted(inverted: InvertedIndex, ranked_nodes: List[Path], limit: int) -> np.ndarray:
    level = inverted.num_levels - 1
    picked: List[np.ndarray] = []
    left = limit
    for node in ranked_nodes:
        if left <= 0:
            break
        members = inverted.postings[level][node][:left]
        picked.append(members)
        left -= len(members)
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)


def brute_force(snapshot: ServingSnapshot, inverted: InvertedIndex, request: UserRequest,
                top_k: int) -> RetrievalResult:
    """Full-ensemble score of every live item; the reference for retrieve_layerwise."""
    check_versions(snapshot, inverted)
    scorer = _Scorer(snapshot, inverted, request)
    for level in range(inverted.num_levels):
        scorer.nodes(level, inverted.level_nodes(level))
    scores = scorer.items(inverted.item_ids)
    return _rank(request.user_id, inverted.item_ids, scores, top_k, scorer.cost, [])


def retrieve_budgeted_queue(snapshot: ServingSnapshot, inverted: InvertedIndex, request: UserRequest,
                            budget: RetrievalBudget) -> RetrievalResult:
    """
    Score every finest-level node, sort descending, and emit items cluster by
    cluster (ascending id inside a cluster) until ``max_items_scored`` items
    have been emitted (None = the whole corpus). Items are not scored; the
    returned scores are their cluster's score.
    """
    check_versions(snapshot, inverted)
    scorer = _Scorer(snapshot, inverted, request)
    if inverted.num_levels == 0:
        clusters, scores, level = [()], np.zeros(1), -1
    else:
        for level in range(inverted.num_levels - 1):
            scorer.nodes(level, inverted.level_nodes(level))
        level = inverted.num_levels - 1
        clusters = inverted.level_nodes(level)
        scores = scorer.nodes(level, clusters)
    limit = len(inverted) if budget.max_items_scored is None else budget.max_items_scored
    emitted: List[int] = []
    emitted_scores: List[float] = []
    for i in top_rows(scores, clusters, len(clusters)):
        if len(emitted) >= limit:
            break
        members = inverted.item_ids if level < 0 else inverted.postings[level][clusters[i]]
        members = members[:limit - len(emitted)]
        emitted.extend(int(m) for m in members)
        emitted_scores.extend([float(scores[i])] * len(members))
    return RetrievalResult(request.user_id, np.asarray(emitted, dtype=np.int64), np.asarray(emitted_scores),
                           scorer.cost, [])
