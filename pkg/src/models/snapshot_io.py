"""
Snapshot directories.

    <dir>/manifest.json     format version, kind, presets, schema, step, extras
    <dir>/params/*.tensor   one file per named parameter
"""

import json
import logging
import os
from typing import Dict, Optional, Tuple

import numpy as np

from src.lib.errors import SnapshotFormatError
from src.lib.tensor_io import read_tensor_dir, write_tensor_dir
from src.numerics.layers import Module

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
PARAMS_DIR = "params"


def write_snapshot(directory: str, kind: str, module: Module, manifest: Optional[dict] = None,
                   extra_tensors: Optional[Dict[str, np.ndarray]] = None) -> str:
    """
    Write ``module``'s parameters plus a manifest.

    Returns:
        The snapshot directory
    """
    os.makedirs(directory, exist_ok=True)
    tensors = dict(module.parameters())
    for name, value in (extra_tensors or {}).items():
        tensors[f"extra.{name}"] = value
    write_tensor_dir(os.path.join(directory, PARAMS_DIR), tensors)
    body = {"format_version": FORMAT_VERSION, "kind": kind, **(manifest or {})}
    with open(os.path.join(directory, MANIFEST), "w") as f:
        json.dump(body, f, indent=2, sort_keys=True)
    logger.info(f"Wrote {kind} snapshot to {directory} ({len(tensors)} tensors)")
    return directory


def read_manifest(directory: str, kind: Optional[str] = None) -> dict:
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise SnapshotFormatError(f"{directory}: no {MANIFEST}")
    try:
        with open(path, "r") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise SnapshotFormatError(f"{path}: invalid JSON ({e.msg})")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise SnapshotFormatError(
            f"{path}: format version {manifest.get('format_version')} is not {FORMAT_VERSION}"
        )
    if kind is not None and manifest.get("kind") != kind:
        raise SnapshotFormatError(f"{path}: expected a {kind} snapshot, found {manifest.get('kind')}")
    return manifest


def read_snapshot(directory: str, kind: Optional[str] = None) -> Tuple[dict, Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """
    Returns:
        (manifest, parameter tensors, extra tensors)
    """
    manifest = read_manifest(directory, kind)
    tensors = read_tensor_dir(os.path.join(directory, PARAMS_DIR))
    params = {k: v for k, v in tensors.items() if not k.startswith("extra.")}
    extras = {k[len("extra."):]: v for k, v in tensors.items() if k.startswith("extra.")}
    return manifest, params, extras


def load_into(module: Module, params: Dict[str, np.ndarray], directory: str):
    try:
        module.load_parameters(params, strict=True)
    except KeyError as e:
        raise SnapshotFormatError(f"{directory}: {e.args[0]}")
