"""Agreement and discrimination metrics.

Continuous targets are scored with the intraclass correlation coefficient
(two-way random effects, absolute agreement, single measurement), the
coefficient of determination, and absolute/percentage errors. Binary
targets additionally get a rank-based AUC-ROC and confusion statistics at
a decision threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# Reliability interpretation thresholds for the ICC.
ICC_GOOD = 0.75
ICC_EXCELLENT = 0.90


@dataclass(frozen=True)
class IccComponents:
    """Mean squares of the two-way ANOVA decomposition behind ICC(2,1)."""

    ms_rows: float
    ms_cols: float
    ms_err: float
    value: float
    degenerate: bool


def _as_finite_1d(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def icc_2_1_components(a, b) -> IccComponents:
    """Two-way random effects, absolute agreement, single measures ICC.

    Ratings ``a`` and ``b`` are the two raters over the same n subjects
    (n >= 3). A zero denominator (e.g. two identical constant vectors)
    is degenerate: the value is defined as 0 with the flag set.
    """
    a = _as_finite_1d(a, "a")
    b = _as_finite_1d(b, "b")
    if a.shape != b.shape:
        raise ValidationError("rating vectors must have equal length")
    n = a.size
    if n < 3:
        raise ValidationError("ICC requires at least 3 subjects")
    k = 2

    grand = (a.sum() + b.sum()) / (n * k)
    row_means = (a + b) / k
    col_means = np.array([a.mean(), b.mean()])

    ss_total = np.sum((a - grand) ** 2) + np.sum((b - grand) ** 2)
    ss_rows = k * np.sum((row_means - grand) ** 2)
    ss_cols = n * np.sum((col_means - grand) ** 2)
    ss_err = ss_total - ss_rows - ss_cols

    ms_rows = ss_rows / (n - 1)
    ms_cols = ss_cols / (k - 1)
    ms_err = ss_err / ((n - 1) * (k - 1))

    denom = ms_rows + (k - 1) * ms_err + (k / n) * (ms_cols - ms_err)
    if denom == 0.0:
        return IccComponents(ms_rows, ms_cols, ms_err, 0.0, True)
    value = (ms_rows - ms_err) / denom
    return IccComponents(ms_rows, ms_cols, ms_err, float(value), False)


def icc_2_1(a, b) -> float:
    """ICC(2,1) of two rating vectors; 0.0 on a degenerate denominator."""
    return icc_2_1_components(a, b).value


def icc_flag(components: IccComponents) -> str:
    """Reliability interpretation of an ICC value."""
    if components.degenerate:
        return "degenerate"
    if components.value > ICC_EXCELLENT:
        return "excellent"
    if components.value > ICC_GOOD:
        return "good"
    return "poor"


def r_squared(truth, pred) -> float:
    """Coefficient of determination 1 - SS_res/SS_tot (may be negative)."""
    truth = _as_finite_1d(truth, "truth")
    pred = _as_finite_1d(pred, "pred")
    if truth.shape != pred.shape:
        raise ValidationError("truth and pred must have equal length")
    if truth.size < 2:
        raise ValidationError("r_squared requires at least 2 points")
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0.0:
        raise ValidationError("truth is constant; r_squared undefined")
    ss_res = np.sum((truth - pred) ** 2)
    return float(1.0 - ss_res / ss_tot)


def mae_mape(truth, pred) -> tuple[float, float]:
    """Mean absolute error and mean absolute percentage error.

    MAPE skips entries whose truth is exactly zero; if every truth is
    zero the MAPE is undefined and an error is raised.
    """
    truth = _as_finite_1d(truth, "truth")
    pred = _as_finite_1d(pred, "pred")
    if truth.shape != pred.shape:
        raise ValidationError("truth and pred must have equal length")
    if truth.size < 1:
        raise ValidationError("mae_mape requires at least 1 point")
    abs_err = np.abs(truth - pred)
    mae = float(abs_err.mean())
    nonzero = truth != 0.0
    if not np.any(nonzero):
        raise ValidationError("all truths are zero; MAPE undefined")
    mape = float(100.0 * np.mean(abs_err[nonzero] / np.abs(truth[nonzero])))
    return mae, mape


def mape_skipped(truth) -> int:
    """Number of zero-truth entries mae_mape excludes from the MAPE."""
    truth = np.asarray(truth, dtype=np.float64)
    return int(np.count_nonzero(truth == 0.0))


def auc_roc(labels, scores) -> float:
    """Rank-based AUC: P(score_pos > score_neg), ties counted half.

    Equivalent to the normalized Mann-Whitney U statistic with midranks.
    """
    labels = _as_finite_1d(labels, "labels")
    scores = _as_finite_1d(scores, "scores")
    if labels.shape != scores.shape:
        raise ValidationError("labels and scores must have equal length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValidationError("labels must be 0 or 1")
    n_pos = int(np.sum(labels == 1))
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC requires at least one positive and one negative")

    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(labels.size, dtype=np.float64)
    # Midranks: tied scores share the average of their 1-based rank span.
    i = 0
    while i < sorted_scores.size:
        j = i
        while j + 1 < sorted_scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1

    rank_sum_pos = ranks[labels == 1].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_at_threshold(labels, scores, threshold: float) -> tuple[float, float]:
    """(sensitivity, specificity) with 'positive' meaning score >= threshold."""
    labels = _as_finite_1d(labels, "labels")
    scores = _as_finite_1d(scores, "scores")
    if labels.shape != scores.shape:
        raise ValidationError("labels and scores must have equal length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValidationError("labels must be 0 or 1")
    pos = labels == 1
    neg = ~pos
    if not np.any(pos) or not np.any(neg):
        raise ValidationError("confusion requires both classes present")
    pred_pos = scores >= threshold
    tp = np.count_nonzero(pred_pos & pos)
    fn = np.count_nonzero(~pred_pos & pos)
    tn = np.count_nonzero(~pred_pos & neg)
    fp = np.count_nonzero(pred_pos & neg)
    sensitivity = tp / (tp + fn)
    specificity = tn / (tn + fp)
    return float(sensitivity), float(specificity)
