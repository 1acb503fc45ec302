"""
Reference network package: synthetic 2-D tasks and the MLP whose activations feed the probes.
"""

from .network import RefNet, RefNetSpec, export_activations, network_loss_and_grads, train_refnet
from .tasks import SHIFT_SEVERITIES, SyntheticTask, generate_task, shift_features

__all__ = [
    'RefNet',
    'RefNetSpec',
    'export_activations',
    'network_loss_and_grads',
    'train_refnet',
    'SHIFT_SEVERITIES',
    'SyntheticTask',
    'generate_task',
    'shift_features',
]
