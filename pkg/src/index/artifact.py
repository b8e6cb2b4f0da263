"""
Index artifact directory.

    <dir>/manifest.json          format version, index version, K per level, d,
                                 mapping (item id -> path), representatives
    <dir>/codebooks/level_<n>.tensor
"""

import json
import logging
import os

import numpy as np

from src.index.hierarchy import PublishedIndex
from src.index.layer import _frozen
from src.lib.errors import SnapshotFormatError
from src.lib.tensor_io import read_tensor, write_tensor

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


def save_index_artifact(directory: str, index: PublishedIndex) -> str:
    os.makedirs(os.path.join(directory, "codebooks"), exist_ok=True)
    for n, codebook in enumerate(index.codebooks):
        write_tensor(os.path.join(directory, "codebooks", f"level_{n}.tensor"), codebook)
    manifest = {
        "format_version": FORMAT_VERSION,
        "index_version": index.version,
        "layer_sizes": [int(c.shape[0]) for c in index.codebooks],
        "dim": index.dim,
        "mapping": [[int(i), [int(k) for k in p]] for i, p in zip(index.item_ids, index.paths)],
        "representatives": [[int(r) for r in reps] for reps in index.representatives],
    }
    with open(os.path.join(directory, MANIFEST), "w") as f:
        json.dump(manifest, f)
    logger.info(f"Saved index v{index.version} ({len(index.item_ids)} items) to {directory}")
    return directory


def load_index_artifact(directory: str) -> PublishedIndex:
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise SnapshotFormatError(f"{directory}: no index manifest")
    try:
        with open(path, "r") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise SnapshotFormatError(f"{path}: invalid JSON ({e.msg})")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise SnapshotFormatError(f"{path}: unsupported index format {manifest.get('format_version')}")

    codebooks = []
    for n, k in enumerate(manifest["layer_sizes"]):
        codebook = read_tensor(os.path.join(directory, "codebooks", f"level_{n}.tensor"))
        if codebook.shape != (k, manifest["dim"]):
            raise SnapshotFormatError(f"{directory}: level {n} codebook has shape {codebook.shape}")
        codebooks.append(_frozen(codebook, np.float64))

    levels = len(codebooks)
    mapping = manifest["mapping"]
    item_ids = np.asarray([m[0] for m in mapping], dtype=np.int64)
    paths = np.asarray([m[1] for m in mapping], dtype=np.int64).reshape(len(mapping), levels)
    if np.any(np.diff(item_ids) <= 0):
        raise SnapshotFormatError(f"{path}: mapping is not sorted by item id")
    reps = manifest["representatives"]
    if len(reps) != levels:
        raise SnapshotFormatError(f"{path}: expected representatives for {levels} levels")
    return PublishedIndex(
        version=int(manifest["index_version"]),
        codebooks=tuple(codebooks),
        item_ids=_frozen(item_ids, np.int64),
        paths=_frozen(paths, np.int64),
        representatives=tuple(_frozen(r, np.int64) for r in reps),
    )
