"""
Significance tests for comparing calibrators across conditions: Wilcoxon
signed-rank (exact and normal approximation), one-way ANOVA, Holm's step-down
correction and a percentile bootstrap.
"""

import logging
import math
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..core.errors import UndefinedStatisticError
from ..core.interfaces import Sidedness
from ..core.numerics import average_ranks
from .metrics import METRIC_REGISTRY, ReportCollection, metric_value, relative_gain

logger = logging.getLogger(__name__)

ZeroMethod = Literal["wilcox", "pratt"]
WilcoxonMethod = Literal["auto", "exact", "normal"]
TestKind = Literal["wilcoxon", "anova"]

EXACT_MAX_N = 25


class PairedSample(BaseModel):
    """Per-condition differences metric_A - metric_B."""
    deltas: List[float] = Field(min_length=1)


class WilcoxonResult(BaseModel):
    w_statistic: float
    n_effective: int
    p_value: float = Field(ge=0.0, le=1.0)
    method: Literal["exact", "normal_approx"]
    sided: Sidedness = "two"


class AnovaResult(BaseModel):
    f_statistic: float = Field(ge=0.0)
    df_between: int
    df_within: int
    p_value: float = Field(ge=0.0, le=1.0)


def _signed_ranks(deltas: np.ndarray, zero_method: ZeroMethod) -> Tuple[np.ndarray, np.ndarray]:
    """Mid-ranks of |delta| for the nonzero deltas and their signs."""
    if zero_method == "wilcox":
        nonzero = deltas[deltas != 0]
        return average_ranks(np.abs(nonzero)), np.sign(nonzero)
    if zero_method == "pratt":
        ranks = average_ranks(np.abs(deltas))
        keep = deltas != 0
        return ranks[keep], np.sign(deltas[keep])
    raise ValueError(f"unknown zero_method {zero_method!r}")


def _exact_lower_tail(doubled_ranks: np.ndarray, w_doubled: int) -> float:
    """P(T <= w) under the sign-flip null, counting all 2^n sign assignments.

    Ranks are doubled so mid-ranks become integers; counts[s] is the number of
    assignments whose positive rank sum (doubled) equals s.
    """
    n = doubled_ranks.shape[0]
    total = int(doubled_ranks.sum())
    dtype = np.int64 if n < 62 else object
    counts = np.zeros(total + 1, dtype=dtype)
    counts[0] = 1
    for r in doubled_ranks.astype(np.int64):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    hits = int(counts[:w_doubled + 1].sum())
    return hits / float(2 ** n)


def _normal_lower_tail(ranks: np.ndarray, w: float) -> float:
    mean = ranks.sum() / 2.0
    sd = math.sqrt(float(np.sum(ranks * ranks)) / 4.0)
    z = (w - mean + 0.5) / sd
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def wilcoxon_signed_rank(
    sample: PairedSample,
    sided: Sidedness = "two",
    zero_method: ZeroMethod = "wilcox",
    method: WilcoxonMethod = "auto",
) -> WilcoxonResult:
    """Wilcoxon signed-rank test on paired differences.

    W is the smaller of the positive and negative rank sums, so the one-sided
    p-value is the tail in whichever direction the data point. With
    method="auto" the exact null distribution is used for up to 25 nonzero
    deltas and the continuity-corrected normal approximation above that.
    """
    deltas = np.asarray(sample.deltas, dtype=np.float64)
    ranks, signs = _signed_ranks(deltas, zero_method)
    n_eff = int(ranks.shape[0])
    if n_eff == 0:
        raise UndefinedStatisticError("Wilcoxon test needs at least one nonzero delta")

    w_plus = float(ranks[signs > 0].sum())
    w_minus = float(ranks[signs < 0].sum())
    w = min(w_plus, w_minus)

    use_exact = method == "exact" or (method == "auto" and n_eff <= EXACT_MAX_N)
    if use_exact:
        tail = _exact_lower_tail(np.rint(2.0 * ranks), int(round(2.0 * w)))
    else:
        tail = _normal_lower_tail(ranks, w)
    p = tail if sided == "one" else 2.0 * tail
    p = float(min(1.0, max(0.0, p)))

    logger.debug(f"Wilcoxon n={n_eff} W={w} p={p} ({'exact' if use_exact else 'normal'}, {sided}-sided)")
    return WilcoxonResult(
        w_statistic=w,
        n_effective=n_eff,
        p_value=p,
        method="exact" if use_exact else "normal_approx",
        sided=sided,
    )


def _continued_fraction(a: float, b: float, x: float, max_iter: int = 300, eps: float = 3e-16) -> float:
    """Modified Lentz evaluation of the incomplete beta continued fraction."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    logger.warning(f"Incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if a <= 0 or b <= 0:
        raise ValueError(f"incomplete beta needs a, b > 0, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _continued_fraction(a, b, x) / a
    return 1.0 - front * _continued_fraction(b, a, 1.0 - x) / b


def f_survival(f: float, df1: int, df2: int) -> float:
    """P(F > f) for an F(df1, df2) variable."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return regularized_incomplete_beta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


def anova_oneway(groups: Sequence[Sequence[float]]) -> AnovaResult:
    if len(groups) < 2:
        raise ValueError(f"ANOVA needs at least 2 groups, got {len(groups)}")
    arrays = [np.asarray(g, dtype=np.float64) for g in groups]
    for i, g in enumerate(arrays):
        if g.shape[0] < 2:
            raise ValueError(f"ANOVA group {i} has {g.shape[0]} values, needs at least 2")

    n = sum(g.shape[0] for g in arrays)
    grand = np.concatenate(arrays).mean()
    ss_between = float(sum(g.shape[0] * (g.mean() - grand) ** 2 for g in arrays))
    ss_within = float(sum(np.sum((g - g.mean()) ** 2) for g in arrays))
    df_between = len(arrays) - 1
    df_within = n - len(arrays)

    if ss_within == 0.0:
        if ss_between == 0.0:
            raise UndefinedStatisticError("ANOVA F is undefined: every value is identical")
        f_stat = math.inf
    else:
        f_stat = (ss_between / df_between) / (ss_within / df_within)
    return AnovaResult(
        f_statistic=f_stat,
        df_between=df_between,
        df_within=df_within,
        p_value=f_survival(f_stat, df_between, df_within),
    )


def holm_correction(p_values: Sequence[float]) -> List[float]:
    """Holm step-down adjusted p-values, returned in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size and (np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p))):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.shape[0]
    order = np.argsort(p, kind="stable")
    scaled = np.minimum(1.0, (m - np.arange(m)) * p[order])
    adjusted = np.empty(m, dtype=np.float64)
    adjusted[order] = np.maximum.accumulate(scaled)
    return adjusted.tolist()


def bootstrap_interval(
    values: Sequence[float],
    level: float = 0.95,
    n_resamples: int = 2000,
    seed: int = 0,
) -> Tuple[float, float]:
    """Percentile bootstrap interval for the mean of values."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("bootstrap needs at least one value")
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, x.shape[0], size=(n_resamples, x.shape[0]))].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    return float(low), float(high)


class ComparisonRow(BaseModel):
    metric: str
    test: TestKind
    n_conditions: int
    mean_a: float
    mean_b: float
    relative_gain: Optional[float] = None
    statistic: Optional[float] = None
    p_value: Optional[float] = None
    p_holm: Optional[float] = None
    note: str = ""


class ComparisonTable(BaseModel):
    method_a: str = "a"
    method_b: str = "b"
    sided: Sidedness = "two"
    rows: List[ComparisonRow] = Field(default_factory=list)

    def format(self) -> str:
        header = f"{'metric':<8}{'test':<10}{'n':>4}{self.method_a:>14}{self.method_b:>14}{'gain %':>10}{'p':>12}{'p (Holm)':>12}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            gain = f"{row.relative_gain:+.1f}" if row.relative_gain is not None else "n/a"
            p = f"{row.p_value:.3g}" if row.p_value is not None else "n/a"
            p_holm = f"{row.p_holm:.3g}" if row.p_holm is not None else "n/a"
            lines.append(
                f"{row.metric:<8}{row.test:<10}{row.n_conditions:>4}{row.mean_a:>14.5f}{row.mean_b:>14.5f}"
                f"{gain:>10}{p:>12}{p_holm:>12}"
            )
        return "\n".join(lines)


def _paired_values(a: ReportCollection, b: ReportCollection, metric: str) -> Tuple[np.ndarray, np.ndarray]:
    b_reports = b.by_condition()
    xs, ys = [], []
    for condition, report in a.by_condition().items():
        other = b_reports.get(condition)
        if other is None:
            continue
        x, y = metric_value(report, metric), metric_value(other, metric)
        if x is None or y is None:
            continue
        xs.append(x)
        ys.append(y)
    return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)


def compare_collections(
    a: ReportCollection,
    b: ReportCollection,
    metrics: Sequence[str],
    test: TestKind = "wilcoxon",
    sided: Sidedness = "two",
) -> ComparisonTable:
    """Compare two calibrators condition by condition, Holm-adjusting across metrics.

    Relative gains read b as the baseline and a as the improvement.
    """
    rows: List[ComparisonRow] = []
    for metric in metrics:
        if metric not in METRIC_REGISTRY:
            raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRIC_REGISTRY)}")
        _, higher_is_better = METRIC_REGISTRY[metric]
        xs, ys = _paired_values(a, b, metric)
        row = ComparisonRow(
            metric=metric,
            test=test,
            n_conditions=int(xs.shape[0]),
            mean_a=float(xs.mean()) if xs.size else math.nan,
            mean_b=float(ys.mean()) if ys.size else math.nan,
        )
        if xs.size == 0:
            row.note = "no shared conditions"
            rows.append(row)
            continue
        if row.mean_b != 0:
            row.relative_gain = relative_gain(row.mean_b, row.mean_a, higher_is_better)
        try:
            if test == "wilcoxon":
                result = wilcoxon_signed_rank(PairedSample(deltas=(xs - ys).tolist()), sided=sided)
                row.statistic, row.p_value = result.w_statistic, result.p_value
                row.note = result.method
            else:
                anova = anova_oneway([xs.tolist(), ys.tolist()])
                row.statistic, row.p_value = anova.f_statistic, anova.p_value
                row.note = f"F({anova.df_between},{anova.df_within})"
        except (UndefinedStatisticError, ValueError) as e:
            logger.warning(f"{metric}: {test} test not applicable: {str(e)}")
            row.note = str(e)
        rows.append(row)

    tested = [i for i, row in enumerate(rows) if row.p_value is not None]
    adjusted = holm_correction([rows[i].p_value for i in tested])
    for i, p in zip(tested, adjusted):
        rows[i].p_holm = p
    return ComparisonTable(method_a=a.method or "a", method_b=b.method or "b", sided=sided, rows=rows)
