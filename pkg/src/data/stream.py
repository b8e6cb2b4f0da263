import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from src.data.world import ItemCatalog, World, churn_items, impression_probabilities

logger = logging.getLogger(__name__)


@dataclass
class Example:
    """One logged impression."""
    user_id: int
    item_id: int
    ud: List[float]                       # user dense
    us: Dict[str, List[int]]              # user sparse
    id_: List[float]                      # item dense
    is_: Dict[str, List[int]]             # item sparse
    xs: Dict[str, List[int]]              # interaction sparse
    y: List[int]                          # per-task labels
    ts: int = 0


@dataclass
class MiniBatch:
    examples: List[Example]

    @property
    def first_ts(self) -> int:
        return self.examples[0].ts if self.examples else 0

    @property
    def last_ts(self) -> int:
        return self.examples[-1].ts if self.examples else 0

    def __len__(self) -> int:
        return len(self.examples)


@dataclass
class ChurnEvent:
    ts: int
    removed: List[int]
    added: ItemCatalog


@dataclass
class ImpressionStream:
    """Minibatches and churn events in the order they happened."""
    events: List[Union[MiniBatch, ChurnEvent]] = field(default_factory=list)

    def batches(self) -> List[MiniBatch]:
        return [e for e in self.events if isinstance(e, MiniBatch)]

    def examples(self) -> List[Example]:
        return [ex for b in self.batches() for ex in b.examples]

    def __len__(self) -> int:
        return len(self.batches())


def user_fields(world: World, user_row: int):
    users = world.users
    cats = list(users.categories[user_row])
    ud = [float(x) for x in users.latent[user_row]]
    us = {"user_id": [int(users.ids[user_row])], "user_categories": cats}
    xs = {"engaged_categories": list(cats)}
    return ud, us, xs


def item_fields(items: ItemCatalog, item_row: int):
    id_ = [float(x) for x in items.latent[item_row]]
    is_ = {"item_id": [int(items.ids[item_row])], "item_categories": list(items.categories[item_row])}
    return id_, is_


def make_example(world: World, user_row: int, item_row: int, labels, ts: int) -> Example:
    ud, us, xs = user_fields(world, user_row)
    id_, is_ = item_fields(world.items, item_row)
    return Example(
        user_id=int(world.users.ids[user_row]),
        item_id=int(world.items.ids[item_row]),
        ud=ud, us=us, id_=id_, is_=is_, xs=xs,
        y=[int(v) for v in labels],
        ts=int(ts),
    )


def sample_impressions(world: World, n: int, rng: np.random.Generator, ts_start: int = 0) -> List[Example]:
    """
    Draw ``n`` impressions: uniform user, uniform live item, Bernoulli labels
    from the generator's true probabilities.
    """
    if n <= 0:
        return []
    user_rows = rng.integers(len(world.users), size=n)
    item_rows = rng.integers(len(world.items), size=n)
    probs = impression_probabilities(world, user_rows, item_rows)
    labels = (rng.random(probs.shape) < probs).astype(np.int64)
    return [
        make_example(world, int(u), int(i), labels[k], ts_start + k)
        for k, (u, i) in enumerate(zip(user_rows, item_rows))
    ]


def build_stream(world: World, num_batches: int, batch_size: int, rng: np.random.Generator,
                 churn_every: int = 0, churn_rate: Optional[float] = None) -> ImpressionStream:
    """
    Simulate an online stream. Every ``churn_every`` batches (0 disables) a
    churn event replaces ``churn_rate`` of the catalog; later impressions only
    reference items that are live at that time.
    """
    rate = world.config.churn_rate if churn_rate is None else churn_rate
    stream = ImpressionStream()
    ts = 0
    for b in range(num_batches):
        if churn_every and b > 0 and b % churn_every == 0 and rate > 0:
            removed, added = churn_items(world, rate)
            stream.events.append(ChurnEvent(ts=ts, removed=removed, added=added))
        examples = sample_impressions(world, batch_size, rng, ts_start=ts)
        ts += batch_size
        stream.events.append(MiniBatch(examples))
    logger.debug(f"Built stream of {num_batches} batches x {batch_size}")
    return stream


def batched(examples: List[Example], batch_size: int) -> ImpressionStream:
    """Wrap an ordered example list into a stream without churn."""
    return ImpressionStream([MiniBatch(examples[i:i + batch_size]) for i in range(0, len(examples), batch_size)])
