"""
Serving snapshot: a trained, calibrated HSNN split into five parts.

    <dir>/manifest.json                 kind "serving", model shape, step, index version
    <dir>/user_tower/                   user embedding
    <dir>/item_tower/                   item embedding (and with it, node assignment)
    <dir>/interaction_towers/           per-layer interaction towers
    <dir>/cluster_model/                codebooks of every index level
    <dir>/overarch/                     over-arch heads, ensemble, calibration

Every part is a regular snapshot directory stamped with the same step and
index version; loading refuses mixed parts.
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.data.world import ItemCatalog
from src.features.assemble import BatchInputs, TowerBatch
from src.features.schema import FeatureSchema, schema_from_dict
from src.index.hierarchy import HierarchicalIndex, PublishedIndex, hard_paths, publish_mapping
from src.lib.errors import SnapshotFormatError
from src.models.hsnn import HSNNModel, hsnn_forward
from src.models.snapshot_io import FORMAT_VERSION, MANIFEST, load_into, read_manifest, read_snapshot, write_snapshot
from src.numerics.layers import Module

logger = logging.getLogger(__name__)

PARTS = ("user_tower", "item_tower", "interaction_towers", "cluster_model", "overarch")
SERVING_KIND = "serving"


class ParamGroup(Module):
    """A named slice of another module's parameters."""

    def __init__(self, params: Dict[str, np.ndarray]):
        self._params = params

    def parameters(self) -> Dict[str, np.ndarray]:
        return self._params


def part_of(name: str) -> str:
    if name.startswith("user_tower"):
        return "user_tower"
    if name.startswith("item_tower"):
        return "item_tower"
    if name.startswith("codebook."):
        return "cluster_model"
    if name.startswith("heads.") and ".interaction." in name:
        return "interaction_towers"
    return "overarch"


def group_parameters(model: HSNNModel) -> Dict[str, Dict[str, np.ndarray]]:
    groups: Dict[str, Dict[str, np.ndarray]] = {part: {} for part in PARTS}
    params = dict(model.parameters())
    params.update(model.index.parameters())
    for name, value in params.items():
        groups[part_of(name)][name] = value
    return groups


@dataclass(frozen=True)
class ServingSnapshot:
    """A reassembled model plus the metadata that ties it to one index version."""
    model: HSNNModel
    schema: FeatureSchema
    index_version: int
    step: int
    manifest: dict

    @property
    def num_levels(self) -> int:
        return self.model.index.num_levels

    @property
    def codebooks(self) -> List[np.ndarray]:
        return self.model.index.codebooks

    def item_embeddings(self, items: TowerBatch) -> np.ndarray:
        return self.model.item_embeddings(items)

    def assign(self, v: np.ndarray) -> np.ndarray:
        """Hard node path per item embedding (argmin down the residual chain)."""
        return hard_paths(self.codebooks, v)

    def predict(self, batch: BatchInputs, representatives: Sequence[TowerBatch] = ()):
        """
        Layer and ensembled logits with paths taken from the item tower.

        Args:
            batch: assembled inputs
            representatives: per level, item inputs of each node's representative
                             (InvertedIndex.representative_items)
        """
        paths = self.assign(self.item_embeddings(batch.item)) if self.num_levels else None
        return hsnn_forward(self.model, batch, paths, list(representatives) or None)

    def catalog_embeddings(self, catalog: ItemCatalog, chunk: int = 4096) -> np.ndarray:
        """Item-tower embeddings of every live item, in catalog order."""
        return self.model.catalog_embeddings(catalog, chunk)

    def publish_catalog(self, catalog: ItemCatalog) -> PublishedIndex:
        """Map every live item into the frozen codebooks under this snapshot's index version."""
        return publish_mapping(self.codebooks, catalog.ids, self.catalog_embeddings(catalog), self.index_version)


def split_model(model: HSNNModel, directory: str) -> ServingSnapshot:
    """
    Write the five serving parts of a trained model and load them back.

    Raises:
        SnapshotFormatError: the model has not been calibrated
    """
    if not model.calibrated:
        raise SnapshotFormatError("refusing to split an uncalibrated model; run calibrate() first")
    stamp = {"step": model.step, "index_version": model.index.version}
    groups = group_parameters(model)
    for part in PARTS:
        extras = {"calibration": model.calibration} if part == "overarch" else None
        write_snapshot(os.path.join(directory, part), f"{SERVING_KIND}.{part}", ParamGroup(groups[part]),
                       stamp, extras)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": SERVING_KIND,
        "parts": list(PARTS),
        "layer_presets": [p.name for p in model.presets],
        "layer_sizes": model.index.layer_sizes,
        "index_dim": model.index_dim,
        "interaction_dim": model.interaction_dim,
        "share_user_tower": model.share_user_tower,
        "num_tasks": model.num_tasks,
        "task_weights": model.task_weights.tolist(),
        "schema": model.schema.to_dict(),
        "schema_hash": model.schema.schema_hash(),
        **stamp,
    }
    with open(os.path.join(directory, MANIFEST), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Split model at step {model.step} (index v{model.index.version}) into {directory}")
    return load_serving_snapshot(directory)


def load_serving_snapshot(directory: str) -> ServingSnapshot:
    """
    Raises:
        SnapshotFormatError: unknown format version, schema hash mismatch,
            missing tensors, or parts stamped with different steps or index versions
    """
    manifest = read_manifest(directory, SERVING_KIND)
    try:
        schema = schema_from_dict(manifest["schema"])
        if schema.schema_hash() != manifest["schema_hash"]:
            raise SnapshotFormatError(f"{directory}: schema hash mismatch")
        step, version = int(manifest["step"]), int(manifest["index_version"])
        params: Dict[str, np.ndarray] = {}
        calibration: Optional[np.ndarray] = None
        for part in PARTS:
            part_dir = os.path.join(directory, part)
            part_manifest, part_params, extras = read_snapshot(part_dir, f"{SERVING_KIND}.{part}")
            if part_manifest["step"] != step or part_manifest["index_version"] != version:
                raise SnapshotFormatError(
                    f"{part_dir}: stamped step {part_manifest['step']} / index v{part_manifest['index_version']}, "
                    f"expected step {step} / index v{version}"
                )
            params.update(part_params)
            if part == "overarch":
                calibration = extras["calibration"]
        sizes = manifest["layer_sizes"]
        codebooks = [params.pop(f"codebook.{n}") for n in range(len(sizes))]
        index = HierarchicalIndex(sizes, manifest["index_dim"], codebooks)
        index.version = version
        model = HSNNModel(schema, manifest["layer_presets"], manifest["num_tasks"], manifest["task_weights"],
                          index, manifest["interaction_dim"], manifest["share_user_tower"])
    except KeyError as e:
        raise SnapshotFormatError(f"{directory}: missing {e.args[0]}")
    load_into(model, params, directory)
    model.calibration[...] = calibration
    model.calibrated = True
    model.step = step
    logger.debug(f"Loaded serving snapshot step {step}, index v{version}")
    return ServingSnapshot(model=model, schema=schema, index_version=version, step=step, manifest=manifest)
