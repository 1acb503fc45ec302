"""
Root package for the lates layer-stack calibration toolkit.
"""

from .core import (
    ActivationDump,
    LogitStack,
    LinearProbe,
    LatesCalibrator,
    TemperatureCalibrator,
    CalibrationPipeline,
    create_default_pipeline,
    fit_lates,
    fit_temperature,
    lates_predict,
    LatesError
)

from .analysis import (
    MetricReport,
    evaluate,
    wilcoxon_signed_rank,
    dominance_experiment,
    TASK_REGISTRY
)

from .refnet import RefNetSpec, SyntheticTask, train_refnet, export_activations

__all__ = [
    'ActivationDump',
    'LogitStack',
    'LinearProbe',
    'LatesCalibrator',
    'TemperatureCalibrator',
    'CalibrationPipeline',
    'create_default_pipeline',
    'fit_lates',
    'fit_temperature',
    'lates_predict',
    'LatesError',
    'MetricReport',
    'evaluate',
    'wilcoxon_signed_rank',
    'dominance_experiment',
    'TASK_REGISTRY',
    'RefNetSpec',
    'SyntheticTask',
    'train_refnet',
    'export_activations'
]
