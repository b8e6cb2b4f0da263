"""
Dense numeric kernel: MLP layers, hashed embedding tables, optimizers and a
finite-difference gradient checker. Everything else in the package computes
on these.
"""

from .layers import (
    Dense,
    MLP,
    MLPCache,
    EmbeddingTable,
    MacMeter,
    Module,
    metered,
    record_macs,
    prefixed,
    mlp_forward,
    mlp_backward,
    embedding_lookup_sum,
)
from .optim import Optimizer, optimizer_step
from .gradcheck import GradCheckReport, finite_diff_check, relative_error
from .functional import sigmoid, log_sigmoid, softmax_rows

__all__ = [
    'Dense',
    'MLP',
    'MLPCache',
    'EmbeddingTable',
    'MacMeter',
    'Module',
    'metered',
    'record_macs',
    'prefixed',
    'mlp_forward',
    'mlp_backward',
    'embedding_lookup_sum',
    'Optimizer',
    'optimizer_step',
    'GradCheckReport',
    'finite_diff_check',
    'relative_error',
    'sigmoid',
    'log_sigmoid',
    'softmax_rows',
]
