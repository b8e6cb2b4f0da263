from dataclasses import asdict, dataclass
from typing import List, Optional

from src.config import FeatureConfig, SchemaConfig, WorldConfig
from src.lib.errors import ConfigError
from src.lib.hashing import stable_hash

SIDES = ("user", "item", "interaction")
KINDS = ("dense", "sparse")

# built-in interaction features computed from the I2IF index
I2IF_DENSE = "i2if"
I2IF_SPARSE = "i2if_ids"
I2IF_QUERY = "engaged_categories"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    side: str
    kind: str
    dim: int
    buckets: int = 0
    source: str = ""

    @property
    def field(self) -> str:
        return self.source or self.name


class FeatureSchema:
    """
    Declared tower inputs. Declaration order fixes concatenation order; every
    feature belongs to exactly one side.
    """

    def __init__(self, features: List[FeatureSpec]):
        self.features = list(features)
        self.validate()

    def validate(self):
        seen = set()
        for spec in self.features:
            if spec.name in seen:
                raise ConfigError(f"schema.{spec.name}", "duplicate feature name")
            seen.add(spec.name)
            if spec.side not in SIDES:
                raise ConfigError(f"schema.{spec.name}.side", f"expected one of {SIDES}")
            if spec.kind not in KINDS:
                raise ConfigError(f"schema.{spec.name}.kind", f"expected one of {KINDS}")
            if spec.dim < 1:
                raise ConfigError(f"schema.{spec.name}.dim", "must be >= 1")
            if spec.kind == "sparse" and spec.buckets < 1:
                raise ConfigError(f"schema.{spec.name}.buckets", "sparse features need buckets >= 1")
            if spec.side == "interaction" and spec.kind == "dense" and spec.name != I2IF_DENSE:
                raise ConfigError(f"schema.{spec.name}", f"the only dense interaction feature is '{I2IF_DENSE}'")
            if spec.name == I2IF_DENSE and spec.dim != 2:
                raise ConfigError(f"schema.{spec.name}.dim", "I2IF dense output is [overlap, jaccard]")
        if not self.dense("user") and not self.sparse("user"):
            raise ConfigError("schema", "user tower has no inputs")
        if not self.dense("item") and not self.sparse("item"):
            raise ConfigError("schema", "item tower has no inputs")

    def dense(self, side: str) -> List[FeatureSpec]:
        return [f for f in self.features if f.side == side and f.kind == "dense"]

    def sparse(self, side: str) -> List[FeatureSpec]:
        return [f for f in self.features if f.side == side and f.kind == "sparse"]

    def dense_dim(self, side: str) -> int:
        return sum(f.dim for f in self.dense(side))

    def has(self, name: str) -> bool:
        return any(f.name == name for f in self.features)

    def to_dict(self) -> list:
        return [asdict(f) for f in self.features]

    def schema_hash(self) -> str:
        return stable_hash(self.to_dict())


def default_schema(world: WorldConfig, embed_dim: int = 8) -> FeatureSchema:
    L = world.latent_dim
    return FeatureSchema([
        FeatureSpec("user_latent", "user", "dense", L),
        FeatureSpec("user_id", "user", "sparse", embed_dim, buckets=1024),
        FeatureSpec("user_categories", "user", "sparse", embed_dim, buckets=64),
        FeatureSpec("item_latent", "item", "dense", L),
        FeatureSpec("item_id", "item", "sparse", embed_dim, buckets=4096),
        FeatureSpec("item_categories", "item", "sparse", embed_dim, buckets=64),
        FeatureSpec(I2IF_DENSE, "interaction", "dense", 2),
        FeatureSpec(I2IF_SPARSE, "interaction", "sparse", embed_dim, buckets=64),
        FeatureSpec(I2IF_QUERY, "interaction", "sparse", embed_dim, buckets=64),
    ])


def schema_from_config(cfg: SchemaConfig, world: WorldConfig) -> FeatureSchema:
    if not cfg.features:
        return default_schema(world)
    specs = []
    for f in cfg.features:
        if not isinstance(f, FeatureConfig):
            raise ConfigError("schema.features", "expected feature objects")
        specs.append(FeatureSpec(f.name, f.side, f.kind, f.dim, f.buckets, f.source))
    return FeatureSchema(specs)


def schema_from_dict(records: Optional[list]) -> FeatureSchema:
    return FeatureSchema([FeatureSpec(**r) for r in records or []])
