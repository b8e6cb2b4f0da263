"""
Tower input assembly.

A side (user, item or interaction) of one example becomes a SideInput: the
dense features concatenated in schema order and every sparse feature as a
sorted id tuple. Batches stack SideInputs into TowerBatch objects that the
towers consume.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.data.stream import Example, item_fields, user_fields
from src.data.world import ItemCatalog, World
from src.features.i2if import I2IFIndex, i2if_intersection, i2if_lookup
from src.features.schema import I2IF_DENSE, I2IF_QUERY, I2IF_SPARSE, FeatureSchema
from src.lib.errors import MissingFeatureError


@dataclass
class SideInput:
    dense: np.ndarray
    sparse: Dict[str, Tuple[int, ...]] = field(default_factory=dict)


@dataclass
class TowerBatch:
    """Stacked inputs of one side: dense (S, D) plus per-feature id lists."""
    dense: np.ndarray
    sparse: Dict[str, List[Tuple[int, ...]]] = field(default_factory=dict)

    def __len__(self) -> int:
        return self.dense.shape[0]

    def take(self, rows) -> "TowerBatch":
        rows = np.asarray(rows, dtype=np.int64)
        return TowerBatch(
            dense=self.dense[rows],
            sparse={name: [ids[r] for r in rows] for name, ids in self.sparse.items()},
        )


@dataclass
class ExampleInputs:
    user: SideInput
    item: SideInput
    interaction: SideInput


@dataclass
class BatchInputs:
    user: TowerBatch
    item: TowerBatch
    interaction: TowerBatch
    labels: np.ndarray          # (S, T)
    user_ids: np.ndarray
    item_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, rows) -> "BatchInputs":
        rows = np.asarray(rows, dtype=np.int64)
        return BatchInputs(self.user.take(rows), self.item.take(rows), self.interaction.take(rows),
                           self.labels[rows], self.user_ids[rows], self.item_ids[rows])


def _dense_side(schema: FeatureSchema, side: str, values: Sequence[float]) -> np.ndarray:
    specs = schema.dense(side)
    out = np.asarray(values, dtype=np.float64)
    offset = 0
    for spec in specs:
        if offset + spec.dim > len(out):
            raise MissingFeatureError(spec.name)
        offset += spec.dim
    return out[:offset].copy()


def _sparse_side(schema: FeatureSchema, side: str, values: Dict[str, List[int]]) -> Dict[str, Tuple[int, ...]]:
    out = {}
    for spec in schema.sparse(side):
        if spec.name == I2IF_SPARSE:
            continue
        if spec.field not in values:
            raise MissingFeatureError(spec.name)
        out[spec.name] = tuple(sorted(int(i) for i in values[spec.field]))
    return out


def user_side(schema: FeatureSchema, ud, us) -> SideInput:
    return SideInput(_dense_side(schema, "user", ud), _sparse_side(schema, "user", us))


def item_side(schema: FeatureSchema, id_, is_) -> SideInput:
    return SideInput(_dense_side(schema, "item", id_), _sparse_side(schema, "item", is_))


def interaction_side(schema: FeatureSchema, xs, item_id: int, i2if: I2IFIndex) -> SideInput:
    query = xs.get(I2IF_QUERY, ())
    dense = []
    if schema.has(I2IF_DENSE):
        dense = list(i2if_lookup(i2if, query, item_id))
    sparse = _sparse_side(schema, "interaction", xs)
    if schema.has(I2IF_SPARSE):
        sparse[I2IF_SPARSE] = i2if_intersection(i2if, query, item_id)
    # keep declaration order
    ordered = {spec.name: sparse[spec.name] for spec in schema.sparse("interaction")}
    return SideInput(np.asarray(dense, dtype=np.float64), ordered)


def assemble_inputs(schema: FeatureSchema, example: Example, i2if: I2IFIndex) -> ExampleInputs:
    """
    Build the three tower inputs for one example.

    Raises:
        MissingFeatureError: a declared feature is absent from the example
        UnknownItemError: the item is not in the I2IF index
    """
    return ExampleInputs(
        user=user_side(schema, example.ud, example.us),
        item=item_side(schema, example.id_, example.is_),
        interaction=interaction_side(schema, example.xs, example.item_id, i2if),
    )


def stack_sides(sides: List[SideInput], dense_dim: int) -> TowerBatch:
    if not sides:
        return TowerBatch(dense=np.zeros((0, dense_dim)))
    dense = np.stack([s.dense for s in sides]) if dense_dim else np.zeros((len(sides), 0))
    names = list(sides[0].sparse.keys())
    return TowerBatch(dense=dense, sparse={n: [s.sparse[n] for s in sides] for n in names})


def assemble_batch(schema: FeatureSchema, examples: Sequence[Example], i2if: I2IFIndex) -> BatchInputs:
    inputs = [assemble_inputs(schema, ex, i2if) for ex in examples]
    return BatchInputs(
        user=stack_sides([x.user for x in inputs], schema.dense_dim("user")),
        item=stack_sides([x.item for x in inputs], schema.dense_dim("item")),
        interaction=stack_sides([x.interaction for x in inputs], schema.dense_dim("interaction")),
        labels=np.asarray([ex.y for ex in examples], dtype=np.float64).reshape(len(examples), -1),
        user_ids=np.asarray([ex.user_id for ex in examples], dtype=np.int64),
        item_ids=np.asarray([ex.item_id for ex in examples], dtype=np.int64),
    )


def catalog_item_batch(schema: FeatureSchema, items: ItemCatalog, rows=None) -> TowerBatch:
    """Item-tower inputs straight from the catalog (no impression needed)."""
    rows = range(len(items)) if rows is None else rows
    sides = [item_side(schema, *item_fields(items, int(r))) for r in rows]
    return stack_sides(sides, schema.dense_dim("item"))


def catalog_user_input(schema: FeatureSchema, world: World, user_id: int) -> Tuple[SideInput, Dict[str, List[int]]]:
    """User-tower input and interaction query features for one user."""
    ud, us, xs = user_fields(world, world.users.row(user_id))
    return user_side(schema, ud, us), xs


def pair_interaction_batch(schema: FeatureSchema, xs: Dict[str, List[int]], item_ids: Sequence[int],
                           i2if: I2IFIndex) -> TowerBatch:
    """Interaction inputs of one user against many items."""
    sides = [interaction_side(schema, xs, int(i), i2if) for i in item_ids]
    return stack_sides(sides, schema.dense_dim("interaction"))


def repeat_side(side: SideInput, n: int) -> TowerBatch:
    dense = np.repeat(side.dense[None, :], n, axis=0) if side.dense.size else np.zeros((n, 0))
    return TowerBatch(dense=dense, sparse={k: [v] * n for k, v in side.sparse.items()})


def pack_tower_batch(batch: TowerBatch, prefix: str) -> Dict[str, np.ndarray]:
    """Flatten a batch into float tensors: dense, then lengths and ids per sparse feature."""
    out = {f"{prefix}.dense": batch.dense}
    for name, ids in batch.sparse.items():
        out[f"{prefix}.{name}.lengths"] = np.asarray([len(x) for x in ids], dtype=np.float64)
        out[f"{prefix}.{name}.values"] = np.asarray([i for x in ids for i in x], dtype=np.float64)
    return out


def unpack_tower_batch(tensors: Dict[str, np.ndarray], prefix: str, sparse_names: Sequence[str]) -> TowerBatch:
    """Inverse of pack_tower_batch. Raises KeyError for a missing tensor."""
    dense = np.atleast_2d(tensors[f"{prefix}.dense"])
    sparse = {}
    for name in sparse_names:
        lengths = tensors[f"{prefix}.{name}.lengths"].astype(np.int64)
        values = tensors[f"{prefix}.{name}.values"].astype(np.int64)
        bounds = np.concatenate([[0], np.cumsum(lengths)])
        sparse[name] = [tuple(int(i) for i in values[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    return TowerBatch(dense=dense, sparse=sparse)
