"""Evaluation statistics for the quality-grading task.

Regression error summaries with bootstrap confidence intervals, the
Wilcoxon signed-rank test for paired model comparison, threshold-based
binary classification metrics (confusion, MCC, AUC), least-squares
agreement, multiclass confusion matrices and error-outlier extraction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

from .datasets import BinaryLabel
from .errors import (
    AllZeroDifferences,
    DegenerateInput,
    EmptyInput,
    IndexOutOfRange,
    LengthMismatch,
    OneClassOnly,
)

__all__ = [
    "EvalReport",
    "BinaryReport",
    "regression_report",
    "bootstrap_ci",
    "wilcoxon_signed_rank",
    "binarize",
    "binary_report",
    "report_from_confusion",
    "auc_score",
    "linear_fit_r2",
    "multiclass_confusion",
    "outliers",
    "relative_improvement",
    "class_score_stats",
]

WILCOXON_EXACT_MAX_N = 25


@dataclass
class EvalReport:
    """Regression error statistics over a test set."""

    mae: float
    rmse: float
    error_sd: float
    min_error: float
    max_error: float
    ci95: tuple[float, float]
    per_sample_abs_errors: list[float]
    n: int

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "error_sd": self.error_sd,
            "min_error": self.min_error,
            "max_error": self.max_error,
            "ci95": list(self.ci95),
            "n": self.n,
        }


@dataclass
class BinaryReport:
    """Thresholded classification statistics with Good as the positive class."""

    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    sensitivity: float | None
    specificity: float | None
    mcc: float
    auc: float | None

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "mcc": self.mcc,
            "auc": self.auc,
            "n": self.n,
        }


def _paired(predicted, reference) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if p.shape != r.shape or p.ndim != 1:
        raise LengthMismatch(f"paired vectors differ: {p.shape} vs {r.shape}")
    if p.size == 0:
        raise EmptyInput("empty input")
    return p, r


def regression_report(
    predicted,
    reference,
    *,
    resamples: int = 1000,
    seed: int = 0,
) -> EvalReport:
    """Summarize absolute errors of predictions against reference scores."""
    p, r = _paired(predicted, reference)
    abs_err = np.abs(p - r)
    mae = float(abs_err.mean())
    rmse = float(np.sqrt(np.mean((p - r) ** 2)))
    sd = float(abs_err.std(ddof=1)) if abs_err.size > 1 else 0.0
    ci = bootstrap_ci(abs_err, resamples=resamples, seed=seed)
    # power-mean inequality; a violation would mean broken arithmetic
    assert rmse >= mae - 1e-12
    assert abs_err.min() - 1e-12 <= mae <= abs_err.max() + 1e-12
    return EvalReport(
        mae=mae,
        rmse=rmse,
        error_sd=sd,
        min_error=float(abs_err.min()),
        max_error=float(abs_err.max()),
        ci95=ci,
        per_sample_abs_errors=[float(e) for e in abs_err],
        n=int(abs_err.size),
    )


def bootstrap_ci(
    abs_errors,
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of a sample."""
    errors = np.asarray(abs_errors, dtype=np.float64)
    if errors.size == 0:
        raise EmptyInput("cannot bootstrap an empty sample")
    if resamples < 100:
        raise ValueError("resamples must be >= 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, errors.size, size=(resamples, errors.size))
    means = errors[idx].mean(axis=1)
    lo_q = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(means, [lo_q, 100.0 - lo_q])
    return float(low), float(high)


def _signed_rank_parts(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _paired(a, b)
    d = a - b
    d = d[d != 0.0]
    if d.size == 0:
        raise AllZeroDifferences("all paired differences are zero")
    ranks = rankdata(np.abs(d))  # midranks for ties
    return d, ranks


def _exact_two_sided_p(ranks: np.ndarray, w_small: float) -> float:
    """P-value by counting sign assignments; DP over doubled (integer) ranks."""
    doubled = np.rint(ranks * 2).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    w2 = int(round(w_small * 2))
    n = len(doubled)
    p = 2.0 * counts[: w2 + 1].sum() / (2.0**n)
    return min(p, 1.0)


def wilcoxon_signed_rank(errors_a, errors_b) -> tuple[float, float]:
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped and tied absolute differences get
    midranks. The statistic is min(W+, W-). For effective n up to 25 the
    p-value is exact (enumeration over sign assignments); beyond that a
    normal approximation with tie and continuity corrections is used.

    Raises:
        AllZeroDifferences: every difference is zero, test undefined.
    """
    d, ranks = _signed_rank_parts(errors_a, errors_b)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    stat = min(w_plus, w_minus)
    n = d.size

    if n <= WILCOXON_EXACT_MAX_N:
        return stat, _exact_two_sided_p(ranks, stat)

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if var <= 0:
        raise AllZeroDifferences("variance degenerate under ties")
    z = (stat - mean + 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * float(norm.cdf(z)))
    return stat, p


def binarize(scores, threshold: float) -> list[BinaryLabel]:
    """Good when score >= threshold (inclusive), Poor below."""
    if not 1.0 <= threshold <= 10.0:
        raise ValueError("threshold must be in [1, 10]")
    return [
        BinaryLabel.GOOD if float(s) >= threshold else BinaryLabel.POOR for s in scores
    ]


def auc_score(scores, reference) -> float:
    """Probability a Good image outscores a Poor one, ties counting half.

    Computed from the rank-sum (Mann-Whitney) formulation, which equals
    pairwise concordance and trapezoidal ROC integration.

    Raises:
        OneClassOnly: only one class present in the reference labels.
    """
    s = np.asarray(scores, dtype=np.float64)
    good = np.asarray([lab == BinaryLabel.GOOD for lab in reference], dtype=bool)
    if s.shape != good.shape:
        raise LengthMismatch("scores and labels differ in length")
    n_good = int(good.sum())
    n_poor = int((~good).sum())
    if n_good == 0 or n_poor == 0:
        raise OneClassOnly("AUC needs both classes present")
    ranks = rankdata(s)
    u = float(ranks[good].sum()) - n_good * (n_good + 1) / 2.0
    return u / (n_good * n_poor)


def report_from_confusion(
    tp: int, fp: int, tn: int, fn: int, threshold: float = 6.5
) -> BinaryReport:
    """Build a report from explicit confusion counts (no AUC without scores)."""
    if min(tp, fp, tn, fn) < 0:
        raise ValueError("counts must be non-negative")
    n = tp + fp + tn + fn
    if n == 0:
        raise EmptyInput("empty confusion matrix")
    accuracy = (tp + tn) / n
    sensitivity = tp / (tp + fn) if (tp + fn) > 0 else None
    specificity = tn / (tn + fp) if (tn + fp) > 0 else None
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom > 0 else 0.0
    return BinaryReport(
        threshold=threshold,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=accuracy,
        sensitivity=sensitivity,
        specificity=specificity,
        mcc=mcc,
        auc=None,
    )


def binary_report(scores, reference, threshold: float = 6.5) -> BinaryReport:
    """Threshold continuous scores against binary reference labels.

    Good is the positive class. AUC is computed threshold-free from the
    raw scores and is None when only one class is present.
    """
    s = list(scores)
    refs = list(reference)
    if len(s) != len(refs):
        raise LengthMismatch("scores and labels differ in length")
    if not s:
        raise EmptyInput("empty input")
    predicted = binarize(s, threshold)
    tp = fp = tn = fn = 0
    for pred, ref in zip(predicted, refs):
        if ref == BinaryLabel.GOOD:
            if pred == BinaryLabel.GOOD:
                tp += 1
            else:
                fn += 1
        else:
            if pred == BinaryLabel.GOOD:
                fp += 1
            else:
                tn += 1
    report = report_from_confusion(tp, fp, tn, fn, threshold)
    try:
        report.auc = auc_score(s, refs)
    except OneClassOnly:
        report.auc = None
    return report


def linear_fit_r2(predicted, reference) -> tuple[float, float, float]:
    """Ordinary least squares of reference on predicted: (slope, intercept, R^2).

    A constant reference yields R^2 = 0.0 by convention (with a warning).

    Raises:
        DegenerateInput: predicted values have zero variance.
    """
    p, r = _paired(predicted, reference)
    if p.size < 2:
        raise EmptyInput("need at least 2 points for a linear fit")
    var_p = float(((p - p.mean()) ** 2).sum())
    if var_p == 0.0:
        raise DegenerateInput("predicted values are constant")
    slope = float(((p - p.mean()) * (r - r.mean())).sum()) / var_p
    intercept = float(r.mean() - slope * p.mean())
    ss_res = float(((r - (slope * p + intercept)) ** 2).sum())
    ss_tot = float(((r - r.mean()) ** 2).sum())
    if ss_tot == 0.0:
        warnings.warn("reference has zero variance; R^2 reported as 0.0")
        return slope, intercept, 0.0
    return slope, intercept, 1.0 - ss_res / ss_tot


def multiclass_confusion(predicted_classes, reference_classes, k: int = 3) -> np.ndarray:
    """Counts matrix[i][j] = #(reference == i and predicted == j)."""
    pred = np.asarray(predicted_classes, dtype=np.int64)
    ref = np.asarray(reference_classes, dtype=np.int64)
    if pred.shape != ref.shape:
        raise LengthMismatch("predicted and reference differ in length")
    if pred.size and (pred.min() < 0 or pred.max() >= k or ref.min() < 0 or ref.max() >= k):
        raise IndexOutOfRange(f"class indices must lie in [0, {k})")
    matrix = np.zeros((k, k), dtype=np.int64)
    for i, j in zip(ref, pred):
        matrix[i, j] += 1
    return matrix


def outliers(
    predicted, reference, ids, cutoff: float = 1.5
) -> list[tuple[str, float, float, float]]:
    """Records whose |predicted - reference| exceeds the cutoff.

    Returns (id, predicted, reference, delta) tuples sorted by descending
    absolute difference; delta is signed (predicted - reference).
    """
    p, r = _paired(predicted, reference)
    ids = list(ids)
    if len(ids) != p.size:
        raise LengthMismatch("ids length differs from predictions")
    rows = [
        (ids[i], float(p[i]), float(r[i]), float(p[i] - r[i]))
        for i in range(p.size)
        if abs(p[i] - r[i]) > cutoff
    ]
    rows.sort(key=lambda t: -abs(t[3]))
    return rows


def relative_improvement(baseline: float, improved: float) -> float:
    """Fractional error reduction from a baseline metric to an improved one."""
    if baseline == 0:
        raise ValueError("baseline must be nonzero")
    return (baseline - improved) / baseline


def class_score_stats(scores, reference) -> dict[str, dict[str, float]]:
    """Per-class mean/SD/min/max of continuous scores under binary labels."""
    s = np.asarray(scores, dtype=np.float64)
    refs = list(reference)
    if len(refs) != s.size:
        raise LengthMismatch("scores and labels differ in length")
    out: dict[str, dict[str, float]] = {}
    for label in BinaryLabel:
        vals = s[[ref == label for ref in refs]]
        if vals.size == 0:
            continue
        out[label.value] = {
            "mean": float(vals.mean()),
            "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            "min": float(vals.min()),
            "max": float(vals.max()),
            "n": int(vals.size),
        }
    return out
