"""
End-to-end experiment: generate data, train HSNN and its index, calibrate,
split for serving, retrieve for a set of users and collect a MetricsReport.

Every random draw comes from ``numpy.random.default_rng([seed, stream])``
with a fixed stream per stage, so a (config, seed) pair reproduces the
report bit for bit.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from src.config import RunConfig, save_config
from src.data.stream import Example, ImpressionStream, build_stream, sample_impressions
from src.data.world import ItemCatalog, World, generate_world, relevant_items
from src.evaluation.metrics import MetricsReport, normalized_entropy, occupancy_stats, recall_at_k
from src.features.assemble import BatchInputs, assemble_batch
from src.features.i2if import I2IFIndex, build_i2if_index
from src.features.schema import FeatureSchema, schema_from_config
from src.index.artifact import save_index_artifact
from src.index.hierarchy import HierarchicalIndex, occupancy
from src.lib.errors import MetricError
from src.lib.hashing import array_hash
from src.models.calibration import calibrate
from src.models.hsnn import HSNNModel, predict_hsnn
from src.models.joim import JoimResult, train_joim
from src.models.monn import MoNNModel
from src.models.presets import get_preset
from src.models.training import train_teacher
from src.serving.cost import account_cost, brute_force_macs
from src.serving.inverted_index import InvertedIndex, build_inverted_index
from src.serving.retrieval import RetrievalBudget, RetrievalResult, retrieve_layerwise, user_request
from src.serving.snapshot import ServingSnapshot, split_model

logger = logging.getLogger(__name__)

# rng stream offsets
STREAM_TRAIN = 11
STREAM_INIT = 12
STREAM_INDEX = 13
STREAM_CALIBRATION = 14
STREAM_EVAL = 15
STREAM_USERS = 16
STREAM_TEACHER = 17


def stage_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


@dataclass
class DataBundle:
    world: World
    schema: FeatureSchema
    catalog: ItemCatalog            # live items when the stream starts
    i2if: I2IFIndex
    stream: ImpressionStream
    dataset_hash: str


@dataclass
class ExperimentResult:
    config: RunConfig
    report: MetricsReport
    training: JoimResult
    snapshot: ServingSnapshot
    inverted: InvertedIndex
    retrievals: List[RetrievalResult] = field(default_factory=list)
    run_dir: Optional[str] = None


def dataset_hash(examples: List[Example]) -> str:
    if not examples:
        return array_hash(np.zeros(0))
    return array_hash(
        np.asarray([ex.user_id for ex in examples], dtype=np.int64),
        np.asarray([ex.item_id for ex in examples], dtype=np.int64),
        np.asarray([ex.y for ex in examples], dtype=np.int64),
        np.asarray([ex.ts for ex in examples], dtype=np.int64),
    )


def prepare_data(cfg: RunConfig) -> DataBundle:
    """World, schema and the training stream. Churn events mutate ``world`` as the stream is built."""
    world = generate_world(cfg.world)
    schema = schema_from_config(cfg.schema, cfg.world)
    catalog = world.items
    i2if = build_i2if_index(catalog)
    stream = build_stream(world, cfg.train.num_batches, cfg.train.batch_size, stage_rng(cfg.seed, STREAM_TRAIN),
                          churn_every=cfg.train.churn_every)
    return DataBundle(world, schema, catalog, i2if, stream, dataset_hash(stream.examples()))


def build_model(cfg: RunConfig, schema: FeatureSchema) -> HSNNModel:
    index = HierarchicalIndex(cfg.index.layer_sizes, cfg.index.index_dim)
    return HSNNModel(schema, cfg.model.layer_presets, cfg.world.num_tasks, cfg.model.task_weights, index,
                     cfg.model.interaction_dim, cfg.model.share_user_tower, stage_rng(cfg.seed, STREAM_INIT))


def train(cfg: RunConfig, data: DataBundle, snapshot_dir: Optional[str] = None) -> JoimResult:
    teacher: Optional[MoNNModel] = None
    if cfg.model.distillation:
        teacher = train_teacher(data.schema, data.stream, cfg.train, data.i2if, cfg.model.teacher_preset,
                                cfg.world.num_tasks, cfg.model.task_weights, stage_rng(cfg.seed, STREAM_TEACHER))
    model = build_model(cfg, data.schema)
    return train_joim(model, data.stream, cfg, data.schema, data.i2if, data.catalog,
                      stage_rng(cfg.seed, STREAM_INDEX), teacher, snapshot_dir)


def train_calibrated(cfg: RunConfig, data: DataBundle, snapshot_dir: Optional[str] = None) -> JoimResult:
    """Train, then fit the calibration biases on a held-out slice of the live catalog."""
    training = train(cfg, data, snapshot_dir)
    batches = holdout_batches(cfg, data.world, data.schema, training.i2if, cfg.train.calibration_examples,
                              STREAM_CALIBRATION)
    calibrate(training.model, batches)
    return training


def holdout_batches(cfg: RunConfig, world: World, schema: FeatureSchema, i2if: I2IFIndex, n: int,
                    stream: int) -> List[BatchInputs]:
    """Fresh impressions on the live catalog, timestamped after training."""
    ts = (cfg.train.num_batches + 1) * cfg.train.batch_size
    examples = sample_impressions(world, n, stage_rng(cfg.seed, stream), ts_start=ts)
    size = cfg.train.batch_size
    return [assemble_batch(schema, examples[i:i + size], i2if) for i in range(0, len(examples), size)]


def evaluate_ne(model: HSNNModel, batches: List[BatchInputs]):
    """(ensemble NE per task, NE per layer per task)."""
    layer_probs = [[] for _ in range(model.num_layers)]
    final, labels = [], []
    for batch in batches:
        layers, pred = predict_hsnn(model, batch)
        for n in range(model.num_layers):
            layer_probs[n].append(layers.probs(n))
        final.append(pred.probs)
        labels.append(batch.labels)
    y = np.concatenate(labels)
    ne = task_ne(np.concatenate(final), y)
    layer_ne = [task_ne(np.concatenate(p), y) for p in layer_probs]
    return ne, layer_ne


def task_ne(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """NE per task; NaN for a task whose holdout labels are all one class."""
    out = np.full(labels.shape[1], np.nan)
    for t in range(labels.shape[1]):
        try:
            out[t] = normalized_entropy(probs[:, t], labels[:, t])[0]
        except MetricError as e:
            logger.warning(f"Skipping NE: {e.message}")
    return out


def evaluate_retrieval(cfg: RunConfig, world: World, snapshot: ServingSnapshot, inverted: InvertedIndex):
    """Recall@K against generator ground truth plus cost, for a fixed sample of users."""
    ks = sorted(cfg.eval.recall_k)
    top_k = max(ks)
    budget = RetrievalBudget(tuple(cfg.serving.beam), cfg.serving.max_items_scored or None, top_k)
    num_users = min(cfg.eval.num_eval_users, len(world.users))
    users = np.sort(stage_rng(cfg.seed, STREAM_USERS).choice(world.users.ids, size=num_users, replace=False))
    recalls = {k: [] for k in ks}
    results = []
    for user_id in users:
        result = retrieve_layerwise(snapshot, inverted, user_request(snapshot, world, int(user_id)), budget)
        results.append(result)
        for k in ks:
            recalls[k].append(recall_at_k(result.item_ids[:k], relevant_items(world, int(user_id), k)))
    return {k: float(np.mean(v)) if v else 0.0 for k, v in recalls.items()}, results


def run_experiment(cfg: RunConfig, run_dir: Optional[str] = None) -> ExperimentResult:
    """
    Args:
        cfg: validated run config
        run_dir: where snapshots, the index artifact, the trace and the report
                 go; a temporary directory when None

    Returns:
        ExperimentResult with the MetricsReport
    """
    if run_dir is None:
        run_dir = tempfile.mkdtemp(prefix="hsnn_run_")
    os.makedirs(run_dir, exist_ok=True)
    data = prepare_data(cfg)
    training = train_calibrated(cfg, data)
    model = training.model

    world = data.world
    ne, layer_ne = evaluate_ne(model, holdout_batches(cfg, world, data.schema, training.i2if,
                                                      cfg.train.eval_examples, STREAM_EVAL))

    snapshot = split_model(model, os.path.join(run_dir, "snapshot"))
    save_index_artifact(os.path.join(run_dir, "index"), training.published)
    inverted = build_inverted_index(training.published, training.catalog, snapshot)
    recall, results = evaluate_retrieval(cfg, world, snapshot, inverted)

    reference = MoNNModel(data.schema, get_preset(cfg.model.preset), cfg.world.num_tasks, cfg.model.task_weights)
    brute_force = brute_force_macs(reference, len(inverted))
    costs = [account_cost(r.cost, brute_force) for r in results]
    macs_total = int(sum(c.measured for c in costs))
    published = training.published
    if published.num_levels:
        level = published.num_levels - 1
        counts = occupancy(published.paths, level, published.codebooks[level].shape[0])
    else:
        counts = np.zeros(0, dtype=np.int64)
    report = MetricsReport(
        mode=cfg.train.mode,
        seed=cfg.seed,
        config_hash=cfg.config_hash(),
        dataset_hash=data.dataset_hash,
        ne=[float(x) for x in ne],
        layer_ne=[[float(x) for x in layer] for layer in layer_ne],
        recall=recall,
        occupancy=[int(c) for c in counts],
        occupancy_ratio=occupancy_stats(counts)["ratio"],
        macs_total=macs_total,
        macs_per_request=macs_total / len(results) if results else 0.0,
        brute_force_macs=brute_force,
        items_scored=float(np.mean([r.cost.items_scored for r in results])) if results else 0.0,
        formula_error=max((c.relative_error for c in costs), default=0.0),
        brute_force_fraction=float(np.mean([c.fraction_of_brute_force or 0.0 for c in costs])) if costs else 0.0,
    )
    write_outputs(run_dir, cfg, report, training.trace)
    logger.info(f"{cfg.train.mode} seed {cfg.seed}: NE {report.ne}, recall {report.recall}")
    return ExperimentResult(cfg, report, training, snapshot, inverted, results, run_dir)


def write_outputs(run_dir: str, cfg: RunConfig, report: MetricsReport, trace: pd.DataFrame):
    save_config(cfg, os.path.join(run_dir, "config.json"))
    trace.to_csv(os.path.join(run_dir, "trace.csv"), index=False)
    with open(os.path.join(run_dir, "report.json"), "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
