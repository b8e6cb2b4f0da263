"""
Hierarchical item index: LTI soft assignment, residual multi-layer
learning, the FLOPs balance regularizer, k-means baselines, publication and
artifact files.
"""

from .lti import (
    lti_distance,
    lti_soft_assign,
    lti_hard_assign,
    lti_index_embedding,
    lti_index_loss,
    soft_assign_backward,
    SchedulerState,
    scheduler_alpha,
    warmup_weight,
    BalanceRegState,
    flops_regularizer,
)
from .residual import ResidualChain, residual_chain, residual_chain_backward
from .layer import IndexLayer, select_representatives
from .kmeans import kmeans_plusplus_init, kmeans_sil, lloyd, residual_kmeans
from .hierarchy import HierarchicalIndex, PublishedIndex, hard_paths, publish_mapping, occupancy, occupancy_ratio
from .trainer import IndexSchedule, IndexTerms, LTITrainer, index_objective
from .artifact import save_index_artifact, load_index_artifact

__all__ = [
    'lti_distance',
    'lti_soft_assign',
    'lti_hard_assign',
    'lti_index_embedding',
    'lti_index_loss',
    'soft_assign_backward',
    'SchedulerState',
    'scheduler_alpha',
    'warmup_weight',
    'BalanceRegState',
    'flops_regularizer',
    'ResidualChain',
    'residual_chain',
    'residual_chain_backward',
    'IndexLayer',
    'select_representatives',
    'kmeans_plusplus_init',
    'kmeans_sil',
    'lloyd',
    'residual_kmeans',
    'HierarchicalIndex',
    'PublishedIndex',
    'hard_paths',
    'publish_mapping',
    'occupancy',
    'occupancy_ratio',
    'IndexSchedule',
    'IndexTerms',
    'LTITrainer',
    'index_objective',
    'save_index_artifact',
    'load_index_artifact',
]
