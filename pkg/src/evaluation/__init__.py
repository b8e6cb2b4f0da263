from .metrics import MetricsReport, normalized_entropy, occupancy_stats, recall_at_k
from .experiment import ExperimentResult, prepare_data, run_experiment
from .ablation import mode_win_rates, run_ablation_grid, win_rates, write_grid

__all__ = [
    'MetricsReport',
    'normalized_entropy',
    'occupancy_stats',
    'recall_at_k',
    'ExperimentResult',
    'prepare_data',
    'run_experiment',
    'mode_win_rates',
    'run_ablation_grid',
    'win_rates',
    'write_grid',
]
