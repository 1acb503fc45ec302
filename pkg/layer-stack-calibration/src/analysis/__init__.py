"""
Analysis package: calibration metrics, significance tests and the dominance experiments.
"""

from .metrics import (
    METRIC_REGISTRY,
    ConditionReport,
    MetricReport,
    ReliabilityBin,
    ReportCollection,
    accuracy,
    auroc,
    auroc_one_vs_rest,
    brier,
    ece,
    evaluate,
    nll,
    read_collection,
    relative_gain,
    write_bins_csv,
    write_report,
)
from .stats import (
    AnovaResult,
    ComparisonTable,
    PairedSample,
    WilcoxonResult,
    anova_oneway,
    bootstrap_interval,
    compare_collections,
    holm_correction,
    wilcoxon_signed_rank,
)
from .theory import (
    TASK_REGISTRY,
    DominanceResult,
    LowDataResult,
    OracleBoundParams,
    ProbeProfile,
    SyntheticStackTask,
    dominance_experiment,
    lambda_schedule,
    low_data_sweep,
    oracle_delta_bound,
    sample_stack,
)

__all__ = [
    'METRIC_REGISTRY',
    'ConditionReport',
    'MetricReport',
    'ReliabilityBin',
    'ReportCollection',
    'accuracy',
    'auroc',
    'auroc_one_vs_rest',
    'brier',
    'ece',
    'evaluate',
    'nll',
    'read_collection',
    'relative_gain',
    'write_bins_csv',
    'write_report',
    'AnovaResult',
    'ComparisonTable',
    'PairedSample',
    'WilcoxonResult',
    'anova_oneway',
    'bootstrap_interval',
    'compare_collections',
    'holm_correction',
    'wilcoxon_signed_rank',
    'TASK_REGISTRY',
    'DominanceResult',
    'LowDataResult',
    'OracleBoundParams',
    'ProbeProfile',
    'SyntheticStackTask',
    'dominance_experiment',
    'lambda_schedule',
    'low_data_sweep',
    'oracle_delta_bound',
    'sample_stack',
]
