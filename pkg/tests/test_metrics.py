import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata

from fundusq.datasets import BinaryLabel
from fundusq.errors import (
    AllZeroDifferences,
    DegenerateInput,
    EmptyInput,
    IndexOutOfRange,
    LengthMismatch,
    OneClassOnly,
)
from fundusq.metrics import (
    auc_score,
    binarize,
    binary_report,
    bootstrap_ci,
    class_score_stats,
    linear_fit_r2,
    multiclass_confusion,
    outliers,
    regression_report,
    relative_improvement,
    report_from_confusion,
    wilcoxon_signed_rank,
)


# --- independent oracles -----------------------------------------------------


def wilcoxon_enumeration_oracle(a, b):
    """Exact two-sided p by enumerating all 2^n sign assignments."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    ranks = rankdata(np.abs(d))
    w_plus = ranks[d > 0].sum()
    w_minus = ranks[d < 0].sum()
    w_small = min(w_plus, w_minus)
    n = len(d)
    count = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        if w <= w_small + 1e-12:
            count += 1
    return min(1.0, 2.0 * count / 2**n)


def auc_pairwise_oracle(scores, labels):
    """Brute-force concordance: P(score_Good > score_Poor), ties half."""
    good = [s for s, lab in zip(scores, labels) if lab is BinaryLabel.GOOD]
    poor = [s for s, lab in zip(scores, labels) if lab is BinaryLabel.POOR]
    total = 0.0
    for g in good:
        for p in poor:
            if g > p:
                total += 1.0
            elif g == p:
                total += 0.5
    return total / (len(good) * len(poor))


# --- regression report -------------------------------------------------------


class TestRegressionReport:
    def test_identity(self):
        rep = regression_report([1.0, 5.0, 9.5], [1.0, 5.0, 9.5])
        assert rep.mae == 0.0 and rep.rmse == 0.0 and rep.max_error == 0.0

    def test_hand_arithmetic(self):
        rep = regression_report([1, 2, 3], [2, 2, 5])
        assert rep.mae == pytest.approx(1.0)
        assert rep.rmse == pytest.approx(math.sqrt(5.0 / 3.0))
        assert rep.min_error == 0.0 and rep.max_error == 2.0
        assert rep.n == 3

    def test_invariants(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n = int(rng.integers(2, 60))
            p = rng.uniform(1, 10, n)
            r = rng.uniform(1, 10, n)
            rep = regression_report(p, r)
            assert rep.rmse >= rep.mae - 1e-12
            assert rep.min_error <= rep.mae <= rep.max_error
            assert rep.ci95[0] <= rep.mae <= rep.ci95[1]

    @given(
        st.lists(
            st.tuples(
                st.floats(1.0, 10.0, allow_nan=False),
                st.floats(1.0, 10.0, allow_nan=False),
            ),
            min_size=1,
            max_size=40,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_rmse_ge_mae_property(self, pairs):
        p = [x for x, _ in pairs]
        r = [y for _, y in pairs]
        rep = regression_report(p, r)
        assert rep.rmse >= rep.mae - 1e-12

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            regression_report([1, 2], [1])
        with pytest.raises(EmptyInput):
            regression_report([], [])


class TestBootstrapCi:
    def test_degenerate_constant(self):
        low, high = bootstrap_ci([0.4] * 20)
        assert low == high
        assert low == pytest.approx(0.4, abs=1e-12)

    def test_contains_mean_on_random_suites(self):
        rng = np.random.default_rng(1)
        for i in range(100):
            errors = rng.uniform(0, 3, size=int(rng.integers(5, 120)))
            low, high = bootstrap_ci(errors, seed=i)
            assert low <= errors.mean() <= high
            assert errors.min() - 1e-12 <= low and high <= errors.max() + 1e-12

    def test_width_matches_standard_error(self):
        # normal(0.6, 0.1) at n=209: SE ~ 0.0069, 95% width ~ 0.027
        rng = np.random.default_rng(2)
        widths = []
        for i in range(20):
            errors = rng.normal(0.6, 0.1, size=209)
            low, high = bootstrap_ci(errors, seed=i)
            widths.append(high - low)
        assert 0.02 <= float(np.mean(widths)) <= 0.06

    def test_deterministic_under_seed(self):
        errors = np.random.default_rng(3).uniform(0, 2, 50)
        assert bootstrap_ci(errors, seed=9) == bootstrap_ci(errors, seed=9)
        assert bootstrap_ci(errors, seed=9) != bootstrap_ci(errors, seed=10)

    def test_errors(self):
        with pytest.raises(EmptyInput):
            bootstrap_ci([])
        with pytest.raises(ValueError):
            bootstrap_ci([1.0], resamples=10)


class TestWilcoxon:
    def test_all_zero_differences(self):
        with pytest.raises(AllZeroDifferences):
            wilcoxon_signed_rank([1, 2, 3], [1, 2, 3])

    def test_spec_example_all_negative_n6(self):
        stat, p = wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [2, 3, 4, 5, 6, 8])
        assert stat == 0.0
        assert p == pytest.approx(2.0 / 64.0)

    def test_exact_matches_enumeration(self):
        rng = np.random.default_rng(4)
        for _ in range(40):
            n = int(rng.integers(3, 11))
            a = rng.uniform(0, 3, n).round(1)
            b = rng.uniform(0, 3, n).round(1)
            if np.all(a == b):
                continue
            _, p = wilcoxon_signed_rank(a, b)
            assert p == pytest.approx(wilcoxon_enumeration_oracle(a, b), abs=1e-12)

    def test_normal_approximation_regime(self):
        rng = np.random.default_rng(5)
        a = rng.normal(0.6, 0.1, 60)
        b = a + 0.08  # clear shift
        stat, p = wilcoxon_signed_rank(a, b)
        assert 0.0 <= p < 0.01

    def test_approx_close_to_exact_at_boundary(self):
        # n=25 exact vs n=26 approximation should agree roughly
        rng = np.random.default_rng(6)
        a = rng.normal(0, 1, 26)
        b = a + rng.normal(0.3, 0.5, 26)
        _, p_approx = wilcoxon_signed_rank(a, b)
        _, p_exact = wilcoxon_signed_rank(a[:25], b[:25])
        assert 0 <= p_approx <= 1 and 0 <= p_exact <= 1

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            wilcoxon_signed_rank([1, 2], [1])


class TestBinarize:
    def test_threshold_inclusive(self):
        assert binarize([6.5], 6.5) == [BinaryLabel.GOOD]
        assert binarize([6.49], 6.5) == [BinaryLabel.POOR]
        assert binarize([10.0], 6.5) == [BinaryLabel.GOOD]

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(7)
        scores = rng.uniform(1, 10, 50)
        thresholds = np.arange(1.0, 10.01, 0.5)
        prev_good = None
        for t in thresholds:
            good = {i for i, lab in enumerate(binarize(scores, t)) if lab is BinaryLabel.GOOD}
            if prev_good is not None:
                assert good <= prev_good  # raising threshold never adds Good
            prev_good = good


class TestBinaryReport:
    def test_paper_confusion_counts(self):
        # Sensitivity 98.4% of 125 Good and specificity 100% of 69 Poor
        rep = report_from_confusion(tp=123, fp=0, tn=69, fn=2)
        assert rep.accuracy == pytest.approx(192 / 194, abs=1e-9)
        assert rep.mcc == pytest.approx(8487 / math.sqrt(123 * 125 * 71 * 69), abs=1e-9)
        assert rep.sensitivity == pytest.approx(0.984, abs=1e-3)
        assert rep.specificity == 1.0

    def test_scores_path_matches_confusion_path(self):
        scores = [7.0, 8.0, 6.5, 3.0, 2.0, 6.4]
        labels = [
            BinaryLabel.GOOD,
            BinaryLabel.GOOD,
            BinaryLabel.POOR,
            BinaryLabel.POOR,
            BinaryLabel.POOR,
            BinaryLabel.GOOD,
        ]
        rep = binary_report(scores, labels, threshold=6.5)
        counted = report_from_confusion(rep.tp, rep.fp, rep.tn, rep.fn, 6.5)
        assert rep.accuracy == counted.accuracy and rep.mcc == counted.mcc
        assert rep.tp == 2 and rep.fp == 1 and rep.tn == 2 and rep.fn == 1

    def test_perfect_separation_auc(self):
        scores = [8.0, 9.0, 7.5, 2.0, 3.0]
        labels = [BinaryLabel.GOOD] * 3 + [BinaryLabel.POOR] * 2
        rep = binary_report(scores, labels)
        assert rep.auc == 1.0

    def test_random_scores_auc_near_half(self):
        rng = np.random.default_rng(8)
        scores = rng.uniform(1, 10, 4000)
        labels = [
            BinaryLabel.GOOD if rng.uniform() < 0.5 else BinaryLabel.POOR
            for _ in range(4000)
        ]
        rep = binary_report(list(scores), labels)
        assert abs(rep.auc - 0.5) < 0.05

    def test_auc_matches_pairwise_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(4, 40))
            scores = list(rng.integers(1, 12, n).astype(float))  # force ties
            labels = [
                BinaryLabel.GOOD if rng.uniform() < 0.5 else BinaryLabel.POOR
                for _ in range(n)
            ]
            if len(set(labels)) < 2:
                continue
            assert auc_score(scores, labels) == pytest.approx(
                auc_pairwise_oracle(scores, labels), abs=1e-12
            )

    def test_auc_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(10)
        scores = rng.uniform(1, 10, 80)
        labels = [
            BinaryLabel.GOOD if rng.uniform() < 0.5 else BinaryLabel.POOR
            for _ in range(80)
        ]
        base = auc_score(list(scores), labels)
        assert auc_score(list(np.exp(scores / 3.0)), labels) == pytest.approx(base)
        assert auc_score(list(scores * 100 - 5), labels) == pytest.approx(base)

    def test_one_class_only(self):
        scores = [7.0, 6.0]
        labels = [BinaryLabel.GOOD, BinaryLabel.GOOD]
        with pytest.raises(OneClassOnly):
            auc_score(scores, labels)
        rep = binary_report(scores, labels)  # others still reported
        assert rep.auc is None
        assert rep.accuracy == 0.5
        assert rep.specificity is None  # no Poor references

    def test_mcc_symmetry_under_class_and_role_swap(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            tp, fp, tn, fn = (int(x) for x in rng.integers(1, 50, 4))
            base = report_from_confusion(tp, fp, tn, fn).mcc
            # swap classes and prediction/reference roles simultaneously:
            # positives become negatives in both axes
            swapped = report_from_confusion(tn, fn, tp, fp).mcc
            assert swapped == pytest.approx(base)


class TestLinearFit:
    def test_identity_fit(self):
        slope, intercept, r2 = linear_fit_r2([1, 2, 3, 4], [1, 2, 3, 4])
        assert slope == pytest.approx(1.0)
        assert intercept == pytest.approx(0.0)
        assert r2 == pytest.approx(1.0)

    def test_closed_form(self):
        slope, intercept, r2 = linear_fit_r2([1, 2, 3], [2, 4, 6])
        assert slope == pytest.approx(2.0)
        assert intercept == pytest.approx(0.0)
        assert r2 == pytest.approx(1.0)

    def test_constant_reference_convention(self):
        with pytest.warns(UserWarning):
            _, _, r2 = linear_fit_r2([1, 2, 3], [4, 4, 4])
        assert r2 == 0.0

    def test_degenerate_predicted(self):
        with pytest.raises(DegenerateInput):
            linear_fit_r2([2, 2, 2], [1, 2, 3])


class TestMulticlassConfusion:
    def test_identity_diagonal(self):
        m = multiclass_confusion([0, 1, 2, 1], [0, 1, 2, 1])
        assert m[0, 0] == 1 and m[1, 1] == 2 and m[2, 2] == 1
        assert m.sum() == 4 and np.trace(m) == 4

    def test_unit_case(self):
        m = multiclass_confusion([2], [0])
        assert m[0, 2] == 1 and m.sum() == 1

    def test_recount_oracle_1000(self):
        rng = np.random.default_rng(12)
        pred = rng.integers(0, 3, 1000)
        ref = rng.integers(0, 3, 1000)
        m = multiclass_confusion(pred, ref)
        assert m.sum() == 1000
        for i in range(3):
            assert m[i].sum() == int((ref == i).sum())
            for j in range(3):
                assert m[i, j] == int(((ref == i) & (pred == j)).sum())

    def test_index_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            multiclass_confusion([3], [0])


class TestOutliers:
    def test_none_qualify(self):
        assert outliers([5.0, 6.0], [5.5, 6.5], ["a", "b"]) == []

    def test_ordering(self):
        rows = outliers(
            [5.2, 6.6, 8.7], [5.0, 5.0, 5.0], ["a", "b", "c"], cutoff=1.5
        )
        assert [r[0] for r in rows] == ["c", "b"]
        assert rows[0][3] == pytest.approx(3.7)

    def test_planted_count(self):
        rng = np.random.default_rng(13)
        ref = rng.uniform(3, 8, 209)
        pred = ref + rng.uniform(-1.0, 1.0, 209)
        planted = rng.choice(209, size=11, replace=False)
        for i in planted:
            pred[i] = ref[i] + 2.0 + rng.uniform(0, 1)
        rows = outliers(pred, ref, [f"id{i}" for i in range(209)], cutoff=1.5)
        assert len(rows) == 11
        assert {r[0] for r in rows} == {f"id{i}" for i in planted}


def test_relative_improvement_paper_delta():
    assert relative_improvement(0.66, 0.61) * 100 == pytest.approx(7.6, abs=0.1)


def test_class_score_stats():
    scores = [8.0, 9.0, 2.0, 3.0]
    labels = [BinaryLabel.GOOD, BinaryLabel.GOOD, BinaryLabel.POOR, BinaryLabel.POOR]
    stats = class_score_stats(scores, labels)
    assert stats["Good"]["mean"] == pytest.approx(8.5)
    assert stats["Poor"]["min"] == 2.0 and stats["Poor"]["max"] == 3.0
    assert stats["Good"]["n"] == 2
