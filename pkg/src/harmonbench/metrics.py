"""Evaluation metrics: MAE, R², age bias, AUC, balanced accuracy, F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

REGRESSION_METRICS = ("mae", "r2", "age_bias")
CLASSIFICATION_METRICS = ("auc", "bacc", "f1")


@dataclass(frozen=True)
class MetricRecord:
    name: str
    value: float
    n: int


def _pair(y_true, y_pred, min_len=1):
    a = np.asarray(y_true)
    b = np.asarray(y_pred)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"length mismatch: {a.shape} vs {b.shape}")
    if len(a) < min_len:
        raise DataError(f"need at least {min_len} samples, got {len(a)}")
    return a, b


def mae(y_true, y_pred):
    a, b = _pair(y_true, y_pred)
    return float(np.mean(np.abs(a.astype(float) - b.astype(float))))


def r2(y_true, y_pred):
    a, b = _pair(y_true, y_pred, 2)
    a = a.astype(float)
    ss_tot = np.sum((a - a.mean()) ** 2)
    if ss_tot == 0:
        raise DataError("R² undefined for a constant target")
    return float(1.0 - np.sum((a - b.astype(float)) ** 2) / ss_tot)


def age_bias(y_true, y_pred):
    """Pearson correlation between the true value and the prediction error.

    Returns 0 when the error has zero variance (a perfect or pure-offset
    predictor has no age-dependent bias).
    """
    a, b = _pair(y_true, y_pred, 2)
    a = a.astype(float)
    err = b.astype(float) - a
    ac = a - a.mean()
    ec = err - err.mean()
    den = np.sqrt(np.dot(ac, ac) * np.dot(ec, ec))
    if den == 0:
        return 0.0
    return float(np.clip(np.dot(ac, ec) / den, -1.0, 1.0))


def auc(y_true, scores):
    """Area under the ROC curve via the Mann-Whitney U statistic (ties count ½).

    ``y_true`` is boolean-like: nonzero/True marks the positive class.
    """
    y, s = _pair(y_true, scores)
    pos = y.astype(bool)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes present")
    ranks = rankdata(s.astype(float))
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def bacc(y_true, y_pred, classes=None):
    """Balanced accuracy in percent: mean per-class recall over true classes."""
    a, b = _pair(y_true, y_pred)
    a = a.astype(str)
    b = b.astype(str)
    labels = sorted(set(a.tolist())) if classes is None else [str(c) for c in classes]
    recalls = []
    for c in labels:
        mask = a == c
        if not mask.any():
            raise DataError(f"class {c!r} has no true samples")
        recalls.append(np.mean(b[mask] == c))
    return float(100.0 * np.mean(recalls))


def f1(y_true, y_pred, positive_class):
    a, b = _pair(y_true, y_pred)
    a = a.astype(str) == str(positive_class)
    b = b.astype(str) == str(positive_class)
    tp = int(np.sum(a & b))
    fp = int(np.sum(~a & b))
    fn = int(np.sum(a & ~b))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def regression_metrics(y_true, y_pred):
    n = len(y_true)
    return [
        MetricRecord("mae", mae(y_true, y_pred), n),
        MetricRecord("r2", r2(y_true, y_pred), n),
        MetricRecord("age_bias", age_bias(y_true, y_pred), n),
    ]


def classification_metrics(y_true, y_pred, positive_scores, positive_class, classes=None):
    y_true = np.asarray(y_true).astype(str)
    n = len(y_true)
    return [
        MetricRecord("auc", auc(y_true == str(positive_class), positive_scores), n),
        MetricRecord("bacc", bacc(y_true, y_pred, classes), n),
        MetricRecord("f1", f1(y_true, y_pred, positive_class), n),
    ]
