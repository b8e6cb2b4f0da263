"""
Binary tensor files used by model snapshots and index artifacts.

Layout: int64 ndim, ndim x int64 dims, then little-endian float64 values in
C order.
"""

import os
from typing import Dict

import numpy as np

from src.lib.errors import SnapshotFormatError

TENSOR_SUFFIX = ".tensor"


def write_tensor(path: str, array: np.ndarray):
    array = np.ascontiguousarray(array, dtype="<f8")
    header = np.asarray([array.ndim, *array.shape], dtype="<i8")
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(array.tobytes())


def read_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        raw_ndim = f.read(8)
        if len(raw_ndim) != 8:
            raise SnapshotFormatError(f"{path}: truncated tensor header")
        ndim = int(np.frombuffer(raw_ndim, dtype="<i8")[0])
        if ndim < 0 or ndim > 8:
            raise SnapshotFormatError(f"{path}: bad tensor rank {ndim}")
        dims = np.frombuffer(f.read(8 * ndim), dtype="<i8")
        if dims.size != ndim:
            raise SnapshotFormatError(f"{path}: truncated tensor dims")
        data = np.frombuffer(f.read(), dtype="<f8")
    shape = tuple(int(d) for d in dims)
    if data.size != int(np.prod(shape, dtype=np.int64)):
        raise SnapshotFormatError(f"{path}: expected {shape}, found {data.size} values")
    return data.reshape(shape).astype(np.float64)


def write_tensor_dir(directory: str, tensors: Dict[str, np.ndarray]):
    """Write one tensor file per named parameter into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    for name, array in tensors.items():
        write_tensor(os.path.join(directory, name + TENSOR_SUFFIX), array)


def read_tensor_dir(directory: str) -> Dict[str, np.ndarray]:
    if not os.path.isdir(directory):
        raise SnapshotFormatError(f"missing tensor directory {directory}")
    tensors = {}
    for filename in sorted(os.listdir(directory)):
        if filename.endswith(TENSOR_SUFFIX):
            tensors[filename[:-len(TENSOR_SUFFIX)]] = read_tensor(os.path.join(directory, filename))
    return tensors
