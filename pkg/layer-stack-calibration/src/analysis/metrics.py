"""
Calibration and discrimination metrics: confidence ECE with reliability bins,
NLL, Brier (signed form), accuracy, AUROC and relative gain.
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..core.errors import DataError, UndefinedStatisticError
from ..core.fileio import PathLike, atomic_write_text
from ..core.interfaces import AucMode
from ..core.numerics import average_ranks
from ..core.stack import loss_value

logger = logging.getLogger(__name__)

DEFAULT_BINS = 10


class ReliabilityBin(BaseModel):
    lower: float
    upper: float
    count: int = Field(ge=0)
    accuracy: float
    mean_confidence: float


class MetricReport(BaseModel):
    """The five headline metrics for one model on one split."""
    ece: float = Field(ge=0.0)
    nll: float = Field(ge=0.0)
    brier: float
    acc: float = Field(ge=0.0, le=1.0)
    auc: Optional[float] = None
    n_examples: int = 0
    auc_mode: AucMode = "correctness"
    bins: List[ReliabilityBin] = Field(default_factory=list)


class ConditionReport(BaseModel):
    condition: str
    report: MetricReport


class ReportCollection(BaseModel):
    """Reports of one calibrator across named conditions (splits, shift levels, seeds)."""
    method: str = ""
    reports: List[ConditionReport] = Field(default_factory=list)

    def by_condition(self) -> Dict[str, MetricReport]:
        return {entry.condition: entry.report for entry in self.reports}


# name -> (report field, higher is better)
METRIC_REGISTRY: Dict[str, Tuple[str, bool]] = {
    "ece": ("ece", False),
    "nll": ("nll", False),
    "brier": ("brier", False),
    "acc": ("acc", True),
    "auc": ("auc", True),
}


def _confidence_and_correct(probs: np.ndarray, labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.argmax(probs, axis=1)  # ties -> lowest index
    confidence = probs[np.arange(probs.shape[0]), predictions]
    return confidence, predictions == labels


def bin_edges(m: int) -> np.ndarray:
    # j / m rather than linspace, so an edge like 0.3 is the double nearest 0.3
    return np.arange(m + 1) / m


def ece(probs: np.ndarray, labels: np.ndarray, m: int = DEFAULT_BINS) -> Tuple[float, List[ReliabilityBin]]:
    """Confidence ECE over m equal-width bins; bins are [lo, hi) with the top one closed."""
    if m < 1:
        raise ValueError(f"ECE needs at least one bin, got m={m}")
    confidence, correct = _confidence_and_correct(probs, labels)
    n = confidence.shape[0]
    edges = bin_edges(m)
    assignment = np.clip(np.searchsorted(edges, confidence, side="right") - 1, 0, m - 1)

    bins: List[ReliabilityBin] = []
    for j in range(m):
        members = assignment == j
        count = int(members.sum())
        bins.append(ReliabilityBin(
            lower=float(edges[j]),
            upper=float(edges[j + 1]),
            count=count,
            accuracy=float(correct[members].mean()) if count else 0.0,
            mean_confidence=float(confidence[members].mean()) if count else 0.0,
        ))
    return ece_from_bins(bins, n), bins


def ece_from_bins(bins: List[ReliabilityBin], n: int) -> float:
    if n == 0:
        return 0.0
    return sum(b.count / n * abs(b.accuracy - b.mean_confidence) for b in bins)


def nll(probs: np.ndarray, labels: np.ndarray) -> float:
    return loss_value(probs, labels, "nll")


def brier(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean of Σ_y p_y² - 2 p_true, in [-1, 1]."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    p_true = probs[np.arange(labels.shape[0]), labels]
    return float(np.mean(np.sum(probs * probs, axis=1) - 2.0 * p_true))


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    _, correct = _confidence_and_correct(probs, labels)
    return float(correct.mean())


def _rank_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    n_pos = int(positive.sum())
    n_neg = positive.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedStatisticError(f"AUROC needs both outcomes, got {n_pos} positive and {n_neg} negative")
    ranks = average_ranks(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc(probs: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a correct prediction is more confident than a wrong one (ties count half)."""
    confidence, correct = _confidence_and_correct(probs, labels)
    return _rank_auc(confidence, correct)


def auroc_one_vs_rest(probs: np.ndarray, labels: np.ndarray) -> float:
    """Macro average of per-class AUROC of p_c for class c versus the rest."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    scores = []
    for c in range(probs.shape[1]):
        positive = labels == c
        if positive.all() or not positive.any():
            continue
        scores.append(_rank_auc(probs[:, c], positive))
    if not scores:
        raise UndefinedStatisticError("one-vs-rest AUROC needs at least one class with both outcomes")
    return float(np.mean(scores))


def relative_gain(baseline: float, improved: float, higher_is_better: bool = False) -> float:
    """Percentage improvement of improved over baseline; negative means worse."""
    if baseline == 0:
        raise ValueError("relative gain is undefined for a zero baseline")
    gain = 100.0 * (baseline - improved) / abs(baseline)
    return -gain if higher_is_better else gain


def evaluate(
    probs: np.ndarray,
    labels: np.ndarray,
    n_bins: int = DEFAULT_BINS,
    auc_mode: AucMode = "correctness",
) -> MetricReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise DataError(f"probabilities of shape {probs.shape} do not match {labels.shape[0]} labels")
    ece_value, bins = ece(probs, labels, n_bins)
    try:
        auc_value: Optional[float] = auroc(probs, labels) if auc_mode == "correctness" else auroc_one_vs_rest(probs, labels)
    except UndefinedStatisticError as e:
        logger.warning(f"AUROC undefined: {str(e)}")
        auc_value = None
    return MetricReport(
        ece=ece_value,
        nll=nll(probs, labels),
        brier=brier(probs, labels),
        acc=accuracy(probs, labels),
        auc=auc_value,
        n_examples=int(labels.shape[0]),
        auc_mode=auc_mode,
        bins=bins,
    )


def metric_value(report: MetricReport, metric: str) -> Optional[float]:
    field_name, _ = METRIC_REGISTRY[metric]
    return getattr(report, field_name)


def bins_csv(bins: List[ReliabilityBin]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["lower", "upper", "count", "accuracy", "mean_confidence"])
    for b in bins:
        writer.writerow([repr(b.lower), repr(b.upper), b.count, repr(b.accuracy), repr(b.mean_confidence)])
    return buffer.getvalue()


def write_bins_csv(bins: List[ReliabilityBin], path: PathLike) -> Path:
    return atomic_write_text(path, bins_csv(bins))


def write_report(report: BaseModel, path: PathLike) -> Path:
    target = atomic_write_text(path, report.model_dump_json(indent=2) + "\n")
    logger.info(f"Wrote report {target}")
    return target


def read_collection(path: PathLike) -> ReportCollection:
    """Load a ReportCollection, accepting a bare MetricReport as a single condition."""
    source = Path(path)
    try:
        payload = json.loads(source.read_text())
        if isinstance(payload, dict) and "reports" in payload:
            return ReportCollection.model_validate(payload)
        return ReportCollection(reports=[ConditionReport(condition=source.stem, report=MetricReport.model_validate(payload))])
    except (json.JSONDecodeError, ValueError) as e:
        raise DataError(f"{source}: not a metric report: {e}") from e
