import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from pydantic import ValidationError

from lates.analysis.metrics import ConditionReport, MetricReport, ReportCollection
from lates.analysis.stats import (
    PairedSample,
    anova_oneway,
    bootstrap_interval,
    compare_collections,
    f_survival,
    holm_correction,
    regularized_incomplete_beta,
    wilcoxon_signed_rank,
)
from lates.core.errors import UndefinedStatisticError
from lates.core.numerics import average_ranks


def enumerate_lower_tail(deltas) -> float:
    """P(T+ <= W) by listing every sign pattern."""
    nonzero = [d for d in deltas if d != 0]
    ranks = average_ranks(np.abs(np.array(nonzero)))
    w_plus = sum(r for r, d in zip(ranks, nonzero) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, nonzero) if d < 0)
    w = min(w_plus, w_minus)
    hits = sum(
        1 for signs in itertools.product((0, 1), repeat=len(ranks))
        if sum(r for r, s in zip(ranks, signs) if s) <= w + 1e-9
    )
    return hits / 2 ** len(ranks)


class TestWilcoxon:
    def test_all_positive_five(self):
        result = wilcoxon_signed_rank(PairedSample(deltas=[1, 2, 3, 4, 5]), sided="one")
        assert result.w_statistic == 0.0
        assert result.method == "exact"
        assert result.p_value == pytest.approx(0.03125, abs=1e-15)

    def test_balanced_signs(self):
        assert wilcoxon_signed_rank(PairedSample(deltas=[1, -1])).p_value == 1.0

    def test_forty_positive_deltas_are_highly_significant(self):
        deltas = np.linspace(0.01, 0.4, 40).tolist()
        exact = wilcoxon_signed_rank(PairedSample(deltas=deltas), method="exact")
        assert exact.p_value < 1e-9
        assert exact.p_value == pytest.approx(2.0 / 2 ** 40)
        normal = wilcoxon_signed_rank(PairedSample(deltas=deltas))
        assert normal.method == "normal_approx"
        assert normal.p_value < 1e-6

    def test_auto_switches_at_25(self, rng):
        deltas = rng.normal(size=26)
        assert wilcoxon_signed_rank(PairedSample(deltas=deltas[:25].tolist())).method == "exact"
        assert wilcoxon_signed_rank(PairedSample(deltas=deltas.tolist())).method == "normal_approx"

    def test_zeros_dropped_or_ranked(self):
        sample = PairedSample(deltas=[0.0, 1.0, 2.0, -3.0])
        wilcox = wilcoxon_signed_rank(sample, zero_method="wilcox")
        pratt = wilcoxon_signed_rank(sample, zero_method="pratt")
        assert wilcox.n_effective == pratt.n_effective == 3
        assert wilcox.w_statistic == 3.0
        assert pratt.w_statistic == 4.0

    def test_all_zero_is_undefined(self):
        with pytest.raises(UndefinedStatisticError):
            wilcoxon_signed_rank(PairedSample(deltas=[0.0, 0.0]))

    def test_empty_sample_rejected(self):
        with pytest.raises(ValidationError):
            PairedSample(deltas=[])

    @pytest.mark.parametrize("seed", range(10))
    def test_exact_matches_sign_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        deltas = np.round(rng.normal(size=int(rng.integers(3, 12))), 1).tolist()
        if not any(deltas):
            return
        result = wilcoxon_signed_rank(PairedSample(deltas=deltas), sided="one")
        assert result.p_value == pytest.approx(enumerate_lower_tail(deltas), abs=1e-12)

    @pytest.mark.parametrize("n", [10, 14, 18, 22, 25])
    def test_exact_and_normal_agree(self, n):
        rng = np.random.default_rng(n)
        for _ in range(10):
            sample = PairedSample(deltas=(rng.normal(size=n) + 0.3).tolist())
            exact = wilcoxon_signed_rank(sample, method="exact")
            normal = wilcoxon_signed_rank(sample, method="normal")
            assert abs(exact.p_value - normal.p_value) < 0.02

    @given(deltas=st.lists(st.integers(min_value=-20, max_value=20), min_size=1, max_size=15))
    def test_negating_deltas_keeps_two_sided_p(self, deltas):
        if not any(deltas):
            return
        p = wilcoxon_signed_rank(PairedSample(deltas=deltas)).p_value
        assert wilcoxon_signed_rank(PairedSample(deltas=[-d for d in deltas])).p_value == pytest.approx(p, abs=1e-15)

    def test_matches_scipy(self, rng):
        scipy_stats = pytest.importorskip("scipy.stats")
        deltas = rng.normal(loc=0.4, size=15)
        ours = wilcoxon_signed_rank(PairedSample(deltas=deltas.tolist()))
        theirs = scipy_stats.wilcoxon(deltas, method="exact")
        assert ours.w_statistic == pytest.approx(theirs.statistic)
        assert ours.p_value == pytest.approx(theirs.pvalue, abs=1e-12)


class TestAnova:
    def test_two_small_groups(self):
        result = anova_oneway([[1, 2, 3], [4, 5, 6]])
        assert result.f_statistic == pytest.approx(13.5, abs=1e-9)
        assert (result.df_between, result.df_within) == (1, 4)
        # F(1, 4) = t(4)^2, so p is the two-sided t tail at sqrt(13.5)
        assert 0.02 < result.p_value < 0.025

    def test_identical_groups(self):
        result = anova_oneway([[1, 2, 3], [1, 2, 3]])
        assert result.f_statistic == 0.0
        assert result.p_value == 1.0

    def test_two_groups_of_nine(self, rng):
        result = anova_oneway([rng.normal(size=9).tolist(), rng.normal(size=9).tolist()])
        assert (result.df_between, result.df_within) == (1, 16)

    def test_zero_variance_everywhere_is_undefined(self):
        with pytest.raises(UndefinedStatisticError):
            anova_oneway([[2, 2], [2, 2]])

    def test_separated_constant_groups(self):
        result = anova_oneway([[1, 1], [2, 2]])
        assert result.f_statistic == float("inf")
        assert result.p_value == 0.0

    def test_needs_two_values_per_group(self):
        with pytest.raises(ValueError):
            anova_oneway([[1.0], [2.0, 3.0]])
        with pytest.raises(ValueError):
            anova_oneway([[1.0, 2.0]])

    def test_scale_invariance(self, rng):
        groups = [rng.normal(size=6).tolist() for _ in range(3)]
        base = anova_oneway(groups).f_statistic
        for c in (-3.0, 0.01, 250.0):
            scaled = [[c * v for v in g] for g in groups]
            assert anova_oneway(scaled).f_statistic == pytest.approx(base, rel=1e-10)

    def test_matches_scipy(self, rng):
        scipy_stats = pytest.importorskip("scipy.stats")
        groups = [rng.normal(loc=mu, size=int(k)) for mu, k in ((0.0, 7), (0.5, 9), (1.0, 5))]
        ours = anova_oneway([g.tolist() for g in groups])
        theirs = scipy_stats.f_oneway(*groups)
        assert ours.f_statistic == pytest.approx(theirs.statistic, rel=1e-10)
        assert ours.p_value == pytest.approx(theirs.pvalue, rel=1e-8)


class TestIncompleteBeta:
    def test_uniform_case(self):
        assert regularized_incomplete_beta(1.0, 1.0, 0.3) == pytest.approx(0.3, abs=1e-14)

    def test_closed_form_a_one(self):
        # I_x(1, b) = 1 - (1 - x)^b
        assert regularized_incomplete_beta(1.0, 3.5, 0.4) == pytest.approx(1.0 - 0.6 ** 3.5, abs=1e-13)

    def test_symmetry(self):
        a, b, x = 2.5, 4.0, 0.35
        assert regularized_incomplete_beta(a, b, x) == pytest.approx(1.0 - regularized_incomplete_beta(b, a, 1.0 - x), abs=1e-13)

    def test_f_survival_edges(self):
        assert f_survival(0.0, 2, 10) == 1.0
        assert f_survival(float("inf"), 2, 10) == 0.0
        # F(2, d) survival is (d / (d + 2f))^(d/2)
        assert f_survival(3.0, 2, 10) == pytest.approx((10 / 16) ** 5, abs=1e-13)


class TestHolm:
    @pytest.mark.parametrize(
        "raw, adjusted",
        [([0.01, 0.04], [0.02, 0.04]), ([0.5], [0.5]), ([1.0, 1.0, 1.0], [1.0, 1.0, 1.0])],
    )
    def test_examples(self, raw, adjusted):
        assert holm_correction(raw) == pytest.approx(adjusted)

    def test_order_restored(self):
        assert holm_correction([0.04, 0.01, 0.03]) == pytest.approx([0.06, 0.03, 0.06])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            holm_correction([0.5, 1.5])

    @given(p=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=12))
    def test_monotone_and_above_raw(self, p):
        adjusted = holm_correction(p)
        assert all(a >= r for a, r in zip(adjusted, p))
        order = np.argsort(p, kind="stable")
        assert all(np.diff(np.asarray(adjusted)[order]) >= 0)


class TestBootstrap:
    def test_interval_brackets_the_mean(self, rng):
        values = rng.normal(loc=2.0, size=200)
        low, high = bootstrap_interval(values, seed=1)
        assert low < values.mean() < high
        assert high - low < 0.5

    def test_deterministic(self):
        assert bootstrap_interval([1.0, 2.0, 5.0], seed=3) == bootstrap_interval([1.0, 2.0, 5.0], seed=3)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            bootstrap_interval([])
        with pytest.raises(ValueError):
            bootstrap_interval([1.0], level=1.0)


def collection(method: str, eces, accs) -> ReportCollection:
    return ReportCollection(
        method=method,
        reports=[
            ConditionReport(condition=f"c{i}", report=MetricReport(ece=e, nll=0.5, brier=-0.5, acc=a, auc=None))
            for i, (e, a) in enumerate(zip(eces, accs))
        ],
    )


class TestCompareCollections:
    def test_wilcoxon_rows_with_holm(self):
        a = collection("lates", [0.01, 0.02, 0.03, 0.02, 0.01, 0.02], [0.9] * 6)
        b = collection("temperature", [0.05, 0.06, 0.04, 0.07, 0.05, 0.08], [0.9, 0.89, 0.91, 0.92, 0.88, 0.9])
        table = compare_collections(a, b, ["ece", "acc", "auc"])
        rows = {row.metric: row for row in table.rows}

        assert rows["ece"].n_conditions == 6
        assert rows["ece"].relative_gain > 0
        assert rows["ece"].p_value == pytest.approx(2.0 / 64)
        assert rows["ece"].p_holm == pytest.approx(min(1.0, 2 * rows["ece"].p_value))
        assert rows["auc"].n_conditions == 0 and rows["auc"].p_value is None
        assert "ece" in table.format()

    def test_anova_reports_degrees_of_freedom(self):
        a = collection("lates", [0.01, 0.02, 0.03], [0.9, 0.8, 0.85])
        b = collection("temperature", [0.05, 0.06, 0.04], [0.9, 0.8, 0.85])
        rows = compare_collections(a, b, ["ece"], test="anova").rows
        assert rows[0].note == "F(1,4)"
        assert rows[0].statistic == pytest.approx(13.5)

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            compare_collections(collection("a", [0.1], [0.9]), collection("b", [0.1], [0.9]), ["f1"])
