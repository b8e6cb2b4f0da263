"""
Serving: the five-part model split, the inverted index over node ids,
layer-wise and budgeted retrieval, and MAC accounting.
"""

from .snapshot import PARTS, ServingSnapshot, load_serving_snapshot, split_model
from .inverted_index import InvertedIndex, NodePayload, apply_churn, build_inverted_index
from .cost import CostCounter, CostReport, account_cost, brute_force_macs, theoretical_cost
from .retrieval import (
    RetrievalBudget,
    RetrievalResult,
    UserRequest,
    brute_force,
    retrieve_budgeted_queue,
    retrieve_layerwise,
    user_request,
)

__all__ = [
    'PARTS',
    'ServingSnapshot',
    'load_serving_snapshot',
    'split_model',
    'InvertedIndex',
    'NodePayload',
    'apply_churn',
    'build_inverted_index',
    'CostCounter',
    'CostReport',
    'account_cost',
    'brute_force_macs',
    'theoretical_cost',
    'RetrievalBudget',
    'RetrievalResult',
    'UserRequest',
    'brute_force',
    'retrieve_budgeted_queue',
    'retrieve_layerwise',
    'user_request',
]
