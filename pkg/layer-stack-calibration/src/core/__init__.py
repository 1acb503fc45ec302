"""
Core package: activation dumps, linear probes, the logit stack and its calibrators.
"""

from .errors import (
    LatesError,
    UsageError,
    DataError,
    DumpFormatError,
    BadMagicError,
    VersionMismatchError,
    TruncatedPayloadError,
    ChecksumMismatchError,
    InvariantError,
    DimensionMismatchError,
    MissingProbeError,
    EmptySplitError,
    UndefinedStatisticError,
    NumericError
)
from .interfaces import Calibrator, PipelineParams, LossKind
from .config import SplitSpec, PoolSpec, ProbeTrainConfig, AggTrainConfig
from .dataio import LayerBlock, ActivationDump, DumpManifest, read_dump, write_dump, split_holdout
from .probes import LinearProbe, train_probe, train_probes, probe_logits, read_probe_bundle, write_probe_bundle
from .stack import (
    LogitStack,
    AggregatorWeights,
    TemperatureModel,
    build_logit_stack,
    lates_predict,
    loss_value,
    aggregator_gradient,
    fit_lates,
    fit_temperature,
    layer_contributions
)
from .calibrators import LatesCalibrator, TemperatureCalibrator, load_calibrator, save_calibrator
from .pipeline import CalibrationPipeline, create_default_pipeline

__all__ = [
    'LatesError',
    'UsageError',
    'DataError',
    'DumpFormatError',
    'BadMagicError',
    'VersionMismatchError',
    'TruncatedPayloadError',
    'ChecksumMismatchError',
    'InvariantError',
    'DimensionMismatchError',
    'MissingProbeError',
    'EmptySplitError',
    'UndefinedStatisticError',
    'NumericError',
    'Calibrator',
    'PipelineParams',
    'LossKind',
    'SplitSpec',
    'PoolSpec',
    'ProbeTrainConfig',
    'AggTrainConfig',
    'LayerBlock',
    'ActivationDump',
    'DumpManifest',
    'read_dump',
    'write_dump',
    'split_holdout',
    'LinearProbe',
    'train_probe',
    'train_probes',
    'probe_logits',
    'read_probe_bundle',
    'write_probe_bundle',
    'LogitStack',
    'AggregatorWeights',
    'TemperatureModel',
    'build_logit_stack',
    'lates_predict',
    'loss_value',
    'aggregator_gradient',
    'fit_lates',
    'fit_temperature',
    'layer_contributions',
    'LatesCalibrator',
    'TemperatureCalibrator',
    'load_calibrator',
    'save_calibrator',
    'CalibrationPipeline',
    'create_default_pipeline'
]
