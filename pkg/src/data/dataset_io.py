"""
Newline-delimited JSON dataset files, one Example per line.

Field names are fixed: user_id, item_id, ud, us, id_, is, xs, y, ts.
"""

import json
import logging
from typing import Iterable, List

from src.data.stream import Example
from src.lib.errors import DatasetFormatError

logger = logging.getLogger(__name__)

FIELDS = ("user_id", "item_id", "ud", "us", "id_", "is", "xs", "y", "ts")


def _is_int(value) -> bool:
    # bool is an int subclass in Python but never a valid id, timestamp or label
    return isinstance(value, int) and not isinstance(value, bool)


def _integer(value, key: str, line_number: int) -> int:
    if not _is_int(value):
        raise DatasetFormatError(line_number, f"'{key}' must be an integer, got {value!r}")
    return value


def example_to_record(ex: Example) -> dict:
    return {
        "user_id": ex.user_id,
        "item_id": ex.item_id,
        "ud": ex.ud,
        "us": ex.us,
        "id_": ex.id_,
        "is": ex.is_,
        "xs": ex.xs,
        "y": ex.y,
        "ts": ex.ts,
    }


def _id_map(value, key: str, line_number: int):
    if not isinstance(value, dict):
        raise DatasetFormatError(line_number, f"'{key}' must be an object")
    out = {}
    for name, ids in value.items():
        if not isinstance(ids, list) or not all(_is_int(i) for i in ids):
            raise DatasetFormatError(line_number, f"'{key}.{name}' must be a list of ints")
        out[name] = ids
    return out


def _floats(value, key: str, line_number: int):
    if not isinstance(value, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
        raise DatasetFormatError(line_number, f"'{key}' must be a list of numbers")
    return [float(x) for x in value]


def record_to_example(record: dict, line_number: int) -> Example:
    missing = [f for f in FIELDS if f not in record]
    if missing:
        raise DatasetFormatError(line_number, f"missing fields {missing}")
    labels = record["y"]
    if not isinstance(labels, list) or any(not _is_int(v) or v not in (0, 1) for v in labels):
        raise DatasetFormatError(line_number, "'y' must be a list of 0/1 labels")
    return Example(
        user_id=_integer(record["user_id"], "user_id", line_number),
        item_id=_integer(record["item_id"], "item_id", line_number),
        ud=_floats(record["ud"], "ud", line_number),
        us=_id_map(record["us"], "us", line_number),
        id_=_floats(record["id_"], "id_", line_number),
        is_=_id_map(record["is"], "is", line_number),
        xs=_id_map(record["xs"], "xs", line_number),
        y=[int(v) for v in labels],
        ts=_integer(record["ts"], "ts", line_number),
    )


def write_dataset(path: str, examples: Iterable[Example]) -> int:
    count = 0
    with open(path, "w") as f:
        for ex in examples:
            f.write(json.dumps(example_to_record(ex), separators=(",", ":")))
            f.write("\n")
            count += 1
    logger.info(f"Wrote {count} examples to {path}")
    return count


def read_dataset(path: str) -> List[Example]:
    """
    Read a dataset file.

    Raises:
        DatasetFormatError: naming the 1-based line of the first bad record;
                            all examples must share the same task count.
    """
    examples = []
    num_tasks = None
    with open(path, "r") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(line_number, f"invalid JSON ({e.msg})")
            if not isinstance(record, dict):
                raise DatasetFormatError(line_number, "record must be an object")
            ex = record_to_example(record, line_number)
            if num_tasks is None:
                num_tasks = len(ex.y)
            elif len(ex.y) != num_tasks:
                raise DatasetFormatError(line_number, f"expected {num_tasks} labels, got {len(ex.y)}")
            examples.append(ex)
    return examples
