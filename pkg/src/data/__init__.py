"""
Synthetic world generation, impression streams and the dataset file format.
"""

from .world import (
    World,
    ItemCatalog,
    UserCatalog,
    generate_world,
    impression_probabilities,
    relevant_items,
    true_scores,
    churn_items,
)
from .stream import (
    Example,
    MiniBatch,
    ChurnEvent,
    ImpressionStream,
    sample_impressions,
    build_stream,
    batched,
)
from .dataset_io import write_dataset, read_dataset

__all__ = [
    'World',
    'ItemCatalog',
    'UserCatalog',
    'generate_world',
    'impression_probabilities',
    'relevant_items',
    'true_scores',
    'churn_items',
    'Example',
    'MiniBatch',
    'ChurnEvent',
    'ImpressionStream',
    'sample_impressions',
    'build_stream',
    'batched',
    'write_dataset',
    'read_dataset',
]
