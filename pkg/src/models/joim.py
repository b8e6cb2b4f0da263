"""
Joint training of HSNN and its hierarchical index.

Three modes share one loop so paired runs see the same stream and seeds:

    JOIM  codebooks are parameters; index layers score the soft residual
          chain and every loss term backpropagates into the item tower and
          the codebooks.
    SIL   the item layer trains alone for the first half of the stream, the
          item embeddings are clustered with residual k-means, then all
          layers train against the frozen index.
    EM    like SIL, but the remaining stream is split into rounds and the
          index is re-clustered after each one.

Every mode ends by publishing hard paths for the live catalog.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from src.config import RunConfig
from src.data.stream import ChurnEvent, ImpressionStream
from src.data.world import ItemCatalog
from src.features.assemble import assemble_batch
from src.features.i2if import I2IFIndex
from src.features.schema import FeatureSchema
from src.index.hierarchy import PublishedIndex
from src.index.kmeans import residual_kmeans
from src.index.trainer import IndexSchedule
from src.models.hsnn import HSNNModel, ObjectiveWeights, hsnn_objective, representative_items, save_hsnn
from src.models.monn import MoNNModel, predict_batch
from src.models.training import StreamCursor
from src.numerics.optim import Optimizer

logger = logging.getLogger(__name__)

PHASES = ("joint", "item_only", "frozen")


@dataclass
class JoimResult:
    model: HSNNModel
    published: PublishedIndex
    trace: pd.DataFrame
    i2if: I2IFIndex
    catalog: ItemCatalog
    snapshots: List[str] = field(default_factory=list)
    # (phase, step, index fingerprint) after every clustering and at the end
    index_history: List[Tuple[str, int, str]] = field(default_factory=list)


def catalog_embeddings(model: HSNNModel, schema: FeatureSchema, catalog: ItemCatalog,
                       chunk: int = 4096) -> Tuple[np.ndarray, np.ndarray]:
    """(item ids, item-tower embeddings) for every live item, in catalog order."""
    return catalog.ids.copy(), model.catalog_embeddings(catalog, chunk)


def split_stream(stream: ImpressionStream, num_batches: int) -> Tuple[ImpressionStream, ImpressionStream]:
    """Cut after ``num_batches`` minibatches; churn events stay where they were."""
    seen = 0
    for pos, event in enumerate(stream.events):
        if seen == num_batches:
            return ImpressionStream(stream.events[:pos]), ImpressionStream(stream.events[pos:])
        if not isinstance(event, ChurnEvent):
            seen += 1
    return ImpressionStream(list(stream.events)), ImpressionStream([])


def split_rounds(stream: ImpressionStream, rounds: int) -> List[ImpressionStream]:
    """``rounds`` consecutive pieces with batch counts differing by at most one."""
    total = len(stream.batches())
    sizes = [total // rounds + (1 if r < total % rounds else 0) for r in range(rounds)]
    pieces = []
    rest = stream
    for size in sizes:
        head, rest = split_stream(rest, size)
        pieces.append(head)
    if rest.events:
        pieces[-1] = ImpressionStream(pieces[-1].events + rest.events)
    return pieces


class JointTrainer:
    """
    Owns the model, the optimizer state and the live catalog while a stream
    is consumed in one or more pieces.
    """

    def __init__(self, model: HSNNModel, config: RunConfig, schema: FeatureSchema, i2if: I2IFIndex,
                 catalog: ItemCatalog, rng: np.random.Generator, total_steps: int,
                 teacher: Optional[MoNNModel] = None, snapshot_dir: Optional[str] = None):
        self.model = model
        self.config = config
        self.schema = schema
        self.i2if = i2if
        self.catalog = catalog
        self.rng = rng
        self.teacher = teacher
        self.snapshot_dir = snapshot_dir
        self.optimizer = Optimizer(config.train.optimizer, config.train.lr)
        self.schedule = IndexSchedule(config.index, total_steps, model.index.num_levels)
        self.step = 0
        self.rows: List[dict] = []
        self.snapshots: List[str] = []
        self.index_history: List[Tuple[str, int, str]] = []

    def weights(self, phase: str) -> ObjectiveWeights:
        mc, ic = self.config.model, self.config.index
        joint = phase == "joint"
        return ObjectiveWeights(
            ensemble=mc.ensemble_loss_weight,
            mse=mc.mse_weight,
            distill=mc.distill_weight if self.teacher is not None else 0.0,
            index=self.schedule.index_weight(self.step) if joint else 0.0,
            balance=self.schedule.balance_weight() if joint else 0.0,
            recon=ic.recon_weight if joint else 0.0,
            index_task=ic.index_task,
        )

    def run(self, stream: ImpressionStream, phase: str):
        if phase not in PHASES:
            raise ValueError(f"unknown phase '{phase}'")
        if not stream.batches():
            return
        model = self.model
        soft = phase == "joint" and model.num_layers > 1
        active = [model.item_layer] if phase == "item_only" else None
        params = dict(model.parameters())
        if soft:
            params.update(model.index.parameters())
        cursor = StreamCursor(stream, self.i2if, self.catalog)
        for batch in cursor:
            inputs = assemble_batch(self.schema, batch.examples, cursor.i2if)
            teacher_probs = predict_batch(self.teacher, inputs).probs if self.teacher is not None else None
            alpha = self.schedule.alpha(self.step) if soft else 0.0
            weights = self.weights(phase)
            result = hsnn_objective(model, inputs, weights, alpha=alpha, soft=soft,
                                    balance_states=self.schedule.balance if soft else None,
                                    teacher_probs=teacher_probs, active_layers=active, step=self.step)
            self.optimizer.step(params, result.grads)
            if soft and result.chain is not None:
                self.schedule.push(result.chain)
            self.step += 1
            model.step = self.step
            every = self.config.index.representative_every
            if soft and every and self.step % every == 0:
                model.refresh_representatives(cursor.catalog)
            row = {"step": self.step, "phase": phase, "alpha": alpha, "index_weight": weights.index,
                   "ts": batch.last_ts, **result.terms, "total": result.total}
            self.rows.append(row)
            log_every = self.config.train.log_every
            if log_every and self.step % log_every == 0:
                terms = " ".join(f"{k}={v:.4f}" for k, v in result.terms.items())
                logger.info(f"step {self.step} [{phase}] alpha={alpha:.2f} {terms}")
            interval = self.config.train.snapshot_interval
            if self.snapshot_dir and interval and self.step % interval == 0:
                path = os.path.join(self.snapshot_dir, f"step_{self.step:06d}")
                self.snapshots.append(save_hsnn(model, path))
        self.i2if = cursor.i2if
        self.catalog = cursor.catalog

    def cluster(self):
        """Residual k-means over the live catalog's item embeddings; freezes the mapping."""
        index = self.model.index
        ids, v = catalog_embeddings(self.model, self.schema, self.catalog)
        layers = residual_kmeans(v, index.layer_sizes, self.config.index.kmeans_iters, self.rng, ids)
        index.set_layers(layers)
        reps = [layer.representatives for layer in layers]
        self.model.set_representatives(reps, representative_items(self.schema, self.catalog, reps))
        self.index_history.append(("cluster", self.step, index.fingerprint()))

    def publish(self) -> PublishedIndex:
        index = self.model.index
        index.frozen_paths = None
        ids, v = catalog_embeddings(self.model, self.schema, self.catalog)
        published = index.publish(ids, v)
        reps = list(published.representatives)
        self.model.set_representatives(reps, representative_items(self.schema, self.catalog, reps))
        self.index_history.append(("publish", self.step, index.fingerprint()))
        return published

    def trace(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows).fillna(0.0)


def em_joint(trainer: JointTrainer, stream: ImpressionStream, rounds: int):
    """
    Alternate frozen-index training and re-clustering.

    Each round trains on the next piece of ``stream`` with the current
    mapping held fixed, then re-clusters the item embeddings.

    Returns:
        (model, index)
    """
    model = trainer.model
    if rounds <= 0:
        return model, model.index
    for r, piece in enumerate(split_rounds(stream, rounds)):
        trainer.run(piece, "frozen")
        trainer.cluster()
        logger.info(f"EM round {r + 1}/{rounds} done at step {trainer.step}")
    return model, model.index


def train_joim(model: HSNNModel, stream: ImpressionStream, config: RunConfig, schema: FeatureSchema,
               i2if: I2IFIndex, catalog: ItemCatalog, rng: np.random.Generator,
               teacher: Optional[MoNNModel] = None, snapshot_dir: Optional[str] = None) -> JoimResult:
    """
    Train ``model`` and its index in place on one pass over ``stream``.

    Args:
        model: HSNN whose ``index`` is trained alongside it
        stream: time-ordered minibatches and churn events
        config: mode from ``train.mode``; index schedule from ``index``
        schema: feature schema
        i2if: I2IF index valid at the start of the stream
        catalog: live items at the start of the stream
        rng: generator for codebook seeding and k-means
        teacher: optional MoNN whose probabilities are soft labels for the item layer
        snapshot_dir: where periodic snapshots go

    Returns:
        JoimResult with the published index

    Raises:
        NonFiniteLossError: a loss term became NaN or infinite (the term is named)
        StreamOrderError: timestamps decrease
    """
    mode = config.train.mode
    total = len(stream.batches())
    trainer = JointTrainer(model, config, schema, i2if, catalog, rng, total, teacher, snapshot_dir)
    if model.num_layers == 1:
        trainer.run(stream, "joint")
    elif mode == "JOIM":
        _, v = catalog_embeddings(model, schema, catalog)
        model.index.init_from_embeddings(v, rng)
        model.refresh_representatives(catalog, v)
        trainer.run(stream, "joint")
    else:
        head, tail = split_stream(stream, max(1, total // 2))
        trainer.run(head, "item_only")
        trainer.cluster()
        if mode == "SIL":
            trainer.run(tail, "frozen")
        else:
            em_joint(trainer, tail, config.train.em_rounds)
            if config.train.em_rounds <= 0:
                trainer.run(tail, "frozen")
    published = trainer.publish()
    logger.info(f"Trained HSNN ({mode}, {model.num_layers} layers) for {trainer.step} steps")
    return JoimResult(model=model, published=published, trace=trainer.trace(), i2if=trainer.i2if,
                      catalog=trainer.catalog, snapshots=trainer.snapshots, index_history=trainer.index_history)
