"""
Run configuration.

A run is described by one JSON file whose sections mirror the dataclasses
below. Anything left out falls back to the defaults here. ``load_config``
validates the merged result and raises ConfigError naming the bad key.
"""

import copy
import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from typing import List, Optional

from src.lib.errors import ConfigError
from src.lib.hashing import stable_hash

MODES = ("JOIM", "SIL", "EM")
PRESETS = ("XS", "S", "M", "L")
TOGGLES = ("scheduler", "warmup", "balance")


@dataclass
class WorldConfig:
    num_users: int = 500
    num_items: int = 2000
    coarse_clusters: int = 4
    fine_per_coarse: int = 5
    latent_dim: int = 8
    base_rates: List[float] = field(default_factory=lambda: [0.1, 0.03])
    noise_scale: float = 0.1
    coarse_scale: float = 2.0
    fine_scale: float = 0.8
    user_noise: float = 0.5
    score_scale: float = 1.0
    churn_rate: float = 0.0
    extra_categories: int = 8
    seed: int = 0

    @property
    def num_fine(self) -> int:
        return self.coarse_clusters * self.fine_per_coarse

    @property
    def num_tasks(self) -> int:
        return len(self.base_rates)


@dataclass
class FeatureConfig:
    name: str = ""
    side: str = "user"          # user | item | interaction
    kind: str = "dense"         # dense | sparse
    dim: int = 1                # dense width, or embedding dim for sparse
    buckets: int = 0            # hashing modulus for sparse features
    source: str = ""            # example field a sparse feature reads; "" = name


@dataclass
class SchemaConfig:
    features: Optional[List[FeatureConfig]] = None


@dataclass
class ModelConfig:
    preset: str = "S"
    layer_presets: List[str] = field(default_factory=lambda: ["M", "XS"])
    task_weights: List[float] = field(default_factory=lambda: [1.0, 1.0])
    share_user_tower: bool = True
    interaction_dim: int = 16
    ensemble_loss_weight: float = 1.0
    mse_weight: float = 0.1
    distillation: bool = False
    distill_weight: float = 1.0
    teacher_preset: str = "L"


@dataclass
class IndexConfig:
    layer_sizes: List[int] = field(default_factory=lambda: [20])
    index_dim: int = 16
    index_task: int = 0
    index_loss_weight: float = 1.0
    scheduler: bool = True
    max_alpha: float = 50.0
    exp: float = 2.0
    max_iters: int = 0          # 0 = use train.num_batches
    balance: bool = True
    balance_weight: float = 0.5
    balance_batches: int = 8
    warmup: bool = True
    warmup_steps: int = 100
    recon_weight: float = 0.1
    kmeans_iters: int = 50
    representative_every: int = 50  # JOIM steps between representative refreshes; 0 = at init only


@dataclass
class TrainConfig:
    mode: str = "JOIM"
    optimizer: str = "adagrad"
    lr: float = 0.05
    batch_size: int = 256
    num_batches: int = 400
    snapshot_interval: int = 100
    log_every: int = 50
    em_rounds: int = 2
    churn_every: int = 0        # batches between churn events; 0 disables
    eval_examples: int = 5000
    calibration_examples: int = 5000


@dataclass
class ServingConfig:
    beam: List[int] = field(default_factory=lambda: [5])
    max_items_scored: int = 0   # 0 = unlimited
    top_k: int = 100


@dataclass
class EvalConfig:
    recall_k: List[int] = field(default_factory=lambda: [10, 50, 100])
    num_eval_users: int = 100
    toggles: List[str] = field(default_factory=lambda: list(TOGGLES))
    modes: List[str] = field(default_factory=lambda: ["JOIM"])
    seeds: int = 3


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    database_path: str = ""
    world: WorldConfig = field(default_factory=WorldConfig)
    schema: SchemaConfig = field(default_factory=SchemaConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    serving: ServingConfig = field(default_factory=ServingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())

    def with_seed(self, seed: int) -> "RunConfig":
        cfg = copy.deepcopy(self)
        cfg.seed = seed
        cfg.world.seed = seed
        return cfg

    def validate(self) -> "RunConfig":
        check_types(self)
        validate_world(self.world)
        validate_model(self.model, self.world)
        validate_index(self.index, self.world)
        validate_train(self.train)
        if len(self.serving.beam) != len(self.index.layer_sizes):
            raise ConfigError("serving.beam", "needs one beam width per index layer")
        if any(b < 1 for b in self.serving.beam):
            raise ConfigError("serving.beam", "beam widths must be >= 1")
        if self.serving.max_items_scored < 0:
            raise ConfigError("serving.max_items_scored", "must be >= 0")
        for toggle in self.eval.toggles:
            if toggle not in TOGGLES:
                raise ConfigError("eval.toggles", f"unknown toggle '{toggle}'")
        for mode in self.eval.modes:
            if mode not in MODES:
                raise ConfigError("eval.modes", f"unknown mode '{mode}'")
        if any(k < 1 for k in self.eval.recall_k):
            raise ConfigError("eval.recall_k", "K must be >= 1")
        return self


def _matches(value, annotation) -> bool:
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        return any(_matches(value, arg) for arg in typing.get_args(annotation))
    if origin is list:
        (item,) = typing.get_args(annotation) or (typing.Any,)
        return isinstance(value, list) and all(_matches(v, item) for v in value)
    if annotation is type(None):
        return value is None
    if annotation is bool:
        return isinstance(value, bool)
    if annotation is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if annotation is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if annotation is str:
        return isinstance(value, str)
    if dataclasses.is_dataclass(annotation):
        return isinstance(value, annotation)
    return True


def check_types(obj, path: str = ""):
    """
    Raises:
        ConfigError: naming the first field whose value has the wrong type
    """
    for f in dataclasses.fields(obj):
        key = f"{path}.{f.name}" if path else f.name
        value = getattr(obj, f.name)
        if not _matches(value, f.type):
            raise ConfigError(key, f"wrong type {type(value).__name__} ({value!r})")
        if dataclasses.is_dataclass(value):
            check_types(value, key)
        elif isinstance(value, list):
            for i, item in enumerate(value):
                if dataclasses.is_dataclass(item):
                    check_types(item, f"{key}[{i}]")


def validate_world(world: WorldConfig):
    if world.num_users < 1:
        raise ConfigError("world.num_users", "must be >= 1")
    if world.coarse_clusters < 1 or world.fine_per_coarse < 1:
        raise ConfigError("world.coarse_clusters", "cluster counts must be >= 1")
    if world.num_fine > world.num_items:
        raise ConfigError("world.num_items", "coarse_clusters * fine_per_coarse must be <= num_items")
    if world.latent_dim < 1:
        raise ConfigError("world.latent_dim", "must be >= 1")
    if not world.base_rates:
        raise ConfigError("world.base_rates", "need at least one task")
    for rate in world.base_rates:
        # 0 and 1 are accepted as degenerate all-negative / all-positive tasks
        if not 0.0 <= rate <= 1.0:
            raise ConfigError("world.base_rates", f"rate {rate} outside [0, 1]")
    if world.noise_scale < 0:
        raise ConfigError("world.noise_scale", "must be >= 0")
    if not 0.0 <= world.churn_rate < 1.0:
        raise ConfigError("world.churn_rate", "must be in [0, 1)")


def validate_model(model: ModelConfig, world: WorldConfig):
    for name in [model.preset, model.teacher_preset, *model.layer_presets]:
        if name not in PRESETS:
            raise ConfigError("model.preset", f"unknown preset '{name}'")
    if not model.layer_presets:
        raise ConfigError("model.layer_presets", "need at least one layer")
    if len(model.task_weights) != world.num_tasks:
        raise ConfigError("model.task_weights", "needs one weight per task")
    if any(w < 0 for w in model.task_weights):
        raise ConfigError("model.task_weights", "weights must be >= 0")
    if model.interaction_dim < 1:
        raise ConfigError("model.interaction_dim", "must be >= 1")


def validate_index(index: IndexConfig, world: WorldConfig):
    if any(k < 1 for k in index.layer_sizes):
        raise ConfigError("index.layer_sizes", "every layer needs K >= 1")
    if any(k > world.num_items for k in index.layer_sizes):
        raise ConfigError("index.layer_sizes", f"K must be <= world.num_items ({world.num_items})")
    if index.index_dim < 1:
        raise ConfigError("index.index_dim", "must be >= 1")
    if index.max_alpha < 0:
        raise ConfigError("index.max_alpha", "must be >= 0")
    if index.exp <= 0:
        raise ConfigError("index.exp", "must be > 0")
    if index.balance_batches < 1:
        raise ConfigError("index.balance_batches", "must be >= 1")
    if index.warmup_steps < 0:
        raise ConfigError("index.warmup_steps", "must be >= 0")
    if index.representative_every < 0:
        raise ConfigError("index.representative_every", "must be >= 0")


def validate_train(train: TrainConfig):
    if train.mode not in MODES:
        raise ConfigError("train.mode", f"expected one of {MODES}, got '{train.mode}'")
    if train.batch_size < 1 or train.num_batches < 1:
        raise ConfigError("train.batch_size", "batch_size and num_batches must be >= 1")
    if train.snapshot_interval < 0:
        raise ConfigError("train.snapshot_interval", "must be >= 0")
    if train.em_rounds < 0:
        raise ConfigError("train.em_rounds", "must be >= 0")
    if train.churn_every < 0:
        raise ConfigError("train.churn_every", "must be >= 0")


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "config", "expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
        sub = _NESTED.get((cls, key))
        if sub is not None and value is not None:
            if isinstance(value, list):
                kwargs[key] = [_build(sub, item, f"{path}.{key}[{i}]") for i, item in enumerate(value)]
            else:
                kwargs[key] = _build(sub, value, f"{path}.{key}" if path else key)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(path or "config", str(e))


_NESTED = {
    (RunConfig, "world"): WorldConfig,
    (RunConfig, "schema"): SchemaConfig,
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "index"): IndexConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "serving"): ServingConfig,
    (RunConfig, "eval"): EvalConfig,
    (SchemaConfig, "features"): FeatureConfig,
}


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    if "seed" in data and "seed" not in data.get("world", {}):
        cfg.world.seed = cfg.seed
    return cfg.validate()


def load_config(path: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    """
    Load a run config from JSON, apply an optional seed override, validate.

    Args:
        path: Config file; None gives the defaults
        seed: Overrides ``seed`` and ``world.seed`` when given

    Returns:
        Validated RunConfig
    """
    data = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError("config", f"file not found: {path}")
        with open(path, "r") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError("config", f"invalid JSON at line {e.lineno}: {e.msg}")
    cfg = config_from_dict(data)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg


def save_config(cfg: RunConfig, path: str):
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
