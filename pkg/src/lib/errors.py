"""
Exception hierarchy for the retrieval stack.

Every error carries a stable ``code`` so the CLI can print a single
machine-parseable line for any failure.
"""

from typing import Optional


class HSNNError(Exception):
    """Base class for all errors raised by this package."""

    code = "hsnn_error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigError(HSNNError):
    """Invalid or inconsistent run configuration."""

    code = "config_error"

    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


class DimensionError(HSNNError):
    """Input shape does not match what a layer or tower expects."""

    code = "dimension_error"

    def __init__(self, layer: str, expected, got):
        super().__init__(f"{layer}: expected dim {expected}, got {got}")
        self.layer = layer
        self.expected = expected
        self.got = got


class DatasetFormatError(HSNNError):
    """A dataset line could not be parsed."""

    code = "dataset_format_error"

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class MissingFeatureError(HSNNError):
    """An example lacks a feature declared in the schema."""

    code = "missing_feature"

    def __init__(self, name: str):
        super().__init__(f"missing feature '{name}'")
        self.name = name


class UnknownItemError(HSNNError):
    """An item id is not present in an index (stale or expired item)."""

    code = "unknown_item"

    def __init__(self, item_id: int, where: str = "index"):
        super().__init__(f"item {item_id} not found in {where}")
        self.item_id = item_id


class StaleIndexError(HSNNError):
    """A node assignment needed for scoring is missing."""

    code = "stale_index"


class NonFiniteLossError(HSNNError):
    """Training produced a NaN or infinite loss term."""

    code = "non_finite_loss"

    def __init__(self, term: str, step: int, value: float, diagnostics: Optional[dict] = None):
        super().__init__(f"loss term '{term}' is {value} at step {step}")
        self.term = term
        self.step = step
        self.value = value
        self.diagnostics = diagnostics or {}


class StreamOrderError(HSNNError):
    """Minibatch timestamps went backwards."""

    code = "stream_order"


class SnapshotFormatError(HSNNError):
    """A snapshot or index artifact is malformed or has an unknown version."""

    code = "snapshot_format"


class VersionSkewError(HSNNError):
    """The serving snapshot and the inverted index were built from different index versions."""

    code = "version_skew"

    def __init__(self, snapshot_version: int, index_version: int):
        super().__init__(
            f"snapshot expects index version {snapshot_version}, inverted index is version {index_version}"
        )
        self.snapshot_version = snapshot_version
        self.index_version = index_version


class GradientCheckError(HSNNError):
    """The loss could not be evaluated during a finite-difference check."""

    code = "gradient_check"


class MetricError(HSNNError):
    """A metric is undefined for its inputs (e.g. single-class labels for NE)."""

    code = "metric_error"
