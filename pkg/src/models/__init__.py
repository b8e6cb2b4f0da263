"""
MoNN towers, presets, losses and online training. The hierarchical model
(HSNN), its joint trainer and calibration live in ``hsnn``, ``joim`` and
``calibration`` and are imported from there.
"""

from .towers import TowerConfig, Tower, MoNNHead
from .presets import Preset, PRESETS, get_preset
from .losses import supervised_loss, supervised_loss_grad, distillation_loss, distillation_loss_grad, total_loss
from .monn import MoNNModel, Prediction, monn_forward, predict_batch, monn_loss_and_grads
from .training import TrainResult, train_monn, train_teacher, save_monn, load_monn

__all__ = [
    'TowerConfig',
    'Tower',
    'MoNNHead',
    'Preset',
    'PRESETS',
    'get_preset',
    'supervised_loss',
    'supervised_loss_grad',
    'distillation_loss',
    'distillation_loss_grad',
    'total_loss',
    'MoNNModel',
    'Prediction',
    'monn_forward',
    'predict_batch',
    'monn_loss_and_grads',
    'TrainResult',
    'train_monn',
    'train_teacher',
    'save_monn',
    'load_monn',
]
