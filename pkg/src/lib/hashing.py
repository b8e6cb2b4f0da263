import hashlib
import json
from typing import Iterable

import numpy as np

# odd 64-bit multiplier (golden ratio) for multiply-shift hashing
_MULTIPLIER = np.uint64(0x9E3779B97F4A7C15)
_SHIFT = np.uint64(32)


def hash_ids(ids: Iterable[int], rows: int) -> np.ndarray:
    """
    Map raw sparse ids into [0, rows) with a multiply-shift hash.

    Collisions are accepted, as with production feature hashing.

    Args:
        ids: Raw integer ids (any sign)
        rows: Number of rows in the target embedding table

    Returns:
        int64 array of bucket indices, same length as ``ids``
    """
    raw = np.asarray(list(ids), dtype=np.int64)
    if raw.size == 0:
        return np.zeros(0, dtype=np.int64)
    mixed = (raw.astype(np.uint64) * _MULTIPLIER) >> _SHIFT
    return (mixed % np.uint64(rows)).astype(np.int64)


def stable_hash(obj) -> str:
    """SHA-256 of the canonical JSON encoding of ``obj``."""
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def array_hash(*arrays: np.ndarray) -> str:
    """SHA-256 over the raw bytes and shapes of one or more arrays."""
    digest = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(str(array.shape).encode("utf-8"))
        digest.update(str(array.dtype).encode("utf-8"))
        digest.update(array.tobytes())
    return digest.hexdigest()


def file_hash(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"not JSON serializable: {type(value).__name__}")
