"""
Online training of a single MoNN over an impression stream.

The stream is consumed exactly once in the order given. Churn events rebuild
the I2IF index before the next minibatch is assembled.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from src.config import TrainConfig
from src.data.stream import ChurnEvent, ImpressionStream, MiniBatch
from src.data.world import ItemCatalog
from src.features.assemble import assemble_batch
from src.features.i2if import I2IFIndex, rebuild_after_churn
from src.features.schema import FeatureSchema, schema_from_dict
from src.lib.errors import NonFiniteLossError, SnapshotFormatError, StreamOrderError
from src.models.monn import MoNNModel, monn_loss_and_grads, predict_batch
from src.models.presets import get_preset
from src.models.snapshot_io import load_into, read_snapshot, write_snapshot
from src.numerics.optim import Optimizer

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: object
    trace: pd.DataFrame
    snapshots: List[str] = field(default_factory=list)
    i2if: Optional[I2IFIndex] = None
    steps: int = 0


class StreamCursor:
    """Walks a stream in order, checking timestamps and applying churn to I2IF."""

    def __init__(self, stream: ImpressionStream, i2if: I2IFIndex, catalog: Optional[ItemCatalog] = None):
        if not stream.batches():
            raise ValueError("training stream has no minibatches")
        self.stream = stream
        self.i2if = i2if
        self.catalog = catalog
        self.last_ts: Optional[int] = None
        self.churn_events = 0

    def _check_order(self, batch: MiniBatch):
        prev = self.last_ts
        for ex in batch.examples:
            if prev is not None and ex.ts < prev:
                raise StreamOrderError(f"timestamp {ex.ts} follows {prev}; the stream must be time ordered")
            prev = ex.ts
        self.last_ts = prev

    def __iter__(self):
        for event in self.stream.events:
            if isinstance(event, ChurnEvent):
                if self.last_ts is not None and event.ts < self.last_ts:
                    raise StreamOrderError(f"churn at {event.ts} follows timestamp {self.last_ts}")
                self.i2if = rebuild_after_churn(self.i2if, event.removed, event.added)
                if self.catalog is not None:
                    self.catalog = self.catalog.replace(event.removed, event.added)
                self.churn_events += 1
                continue
            if not event.examples:
                continue
            self._check_order(event)
            yield event


def check_finite(term: str, value: float, step: int, diagnostics: Optional[dict] = None):
    if not np.isfinite(value):
        raise NonFiniteLossError(term, step, value, diagnostics)


def train_monn(model: MoNNModel, stream: ImpressionStream, optimizer: Optimizer, config: TrainConfig,
               schema: FeatureSchema, i2if: I2IFIndex, teacher: Optional[MoNNModel] = None,
               distill_weight: float = 1.0, snapshot_dir: Optional[str] = None) -> TrainResult:
    """
    Single pass over ``stream`` updating ``model`` in place.

    Args:
        model: Model to train
        stream: Time-ordered minibatches and churn events
        optimizer: Parameter update rule
        config: log_every and snapshot_interval are read from here
        schema: Feature schema used to assemble batches
        i2if: I2IF index valid at the start of the stream
        teacher: Optional frozen model whose probabilities are soft labels
        distill_weight: Weight of the distillation term when ``teacher`` is set
        snapshot_dir: When set, snapshots go to ``<snapshot_dir>/step_<n>``

    Returns:
        TrainResult with the loss trace as a DataFrame

    Raises:
        StreamOrderError: timestamps decrease somewhere in the stream
        NonFiniteLossError: the loss became NaN or infinite
    """
    cursor = StreamCursor(stream, i2if)
    params = model.parameters()
    rows = []
    snapshots = []
    step = 0
    for batch in cursor:
        inputs = assemble_batch(schema, batch.examples, cursor.i2if)
        teacher_probs = predict_batch(teacher, inputs).probs if teacher is not None else None
        loss, grads, _ = monn_loss_and_grads(model, inputs, teacher_probs, distill_weight)
        check_finite("total", loss, step, {"batch_first_ts": batch.first_ts, "batch_size": len(batch)})
        optimizer.step(params, grads)
        step += 1
        rows.append({"step": step, "loss": loss, "ts": batch.last_ts})
        if config.log_every and step % config.log_every == 0:
            logger.info(f"step {step}: loss={loss:.5f}")
        if snapshot_dir and config.snapshot_interval and step % config.snapshot_interval == 0:
            snapshots.append(save_monn(model, os.path.join(snapshot_dir, f"step_{step:06d}"), step))

    logger.info(f"Trained MoNN-{model.preset.name} for {step} steps ({cursor.churn_events} churn events)")
    return TrainResult(model=model, trace=pd.DataFrame(rows, columns=["step", "loss", "ts"]),
                       snapshots=snapshots, i2if=cursor.i2if, steps=step)


def train_teacher(schema: FeatureSchema, stream: ImpressionStream, config: TrainConfig, i2if: I2IFIndex,
                  preset: str, num_tasks: int, task_weights, rng: np.random.Generator) -> MoNNModel:
    """Fit a (usually larger) MoNN whose probabilities serve as distillation targets."""
    teacher = MoNNModel(schema, get_preset(preset), num_tasks, task_weights, rng)
    train_monn(teacher, stream, Optimizer(config.optimizer, config.lr), config, schema, i2if)
    return teacher


def save_monn(model: MoNNModel, directory: str, step: int) -> str:
    return write_snapshot(directory, "monn", model, {
        "preset": model.preset.name,
        "num_tasks": model.num_tasks,
        "task_weights": model.task_weights.tolist(),
        "schema_hash": model.schema.schema_hash(),
        "schema": model.schema.to_dict(),
        "step": step,
    })


def load_monn(directory: str) -> MoNNModel:
    manifest, params, _ = read_snapshot(directory, "monn")
    schema = schema_from_dict(manifest["schema"])
    if schema.schema_hash() != manifest.get("schema_hash"):
        raise SnapshotFormatError(f"{directory}: schema hash mismatch")
    model = MoNNModel(schema, manifest["preset"], manifest["num_tasks"], manifest["task_weights"])
    load_into(model, params, directory)
    return model
