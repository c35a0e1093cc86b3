"""Discrimination, calibration, and distribution-distance metrics.

All functions take plain float64 arrays. Tie handling is exact:

* ``auc_roc`` uses average ranks, so tied scores contribute 1/2.
* ``auc_prc`` is average precision where every positive inside a tied
  score block receives the precision evaluated at the end of the block
  (the block's total counts), making the value independent of the
  ordering within ties.
* ``emd_1d`` integrates |F_a - F_b| over the merged support, which is
  the exact 1-D earth mover's distance for equal total mass.

Rates with empty denominators come back as ``None`` rather than NaN so
downstream aggregation has to acknowledge them explicitly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import UndefinedMetricError, ValidationError

logger = logging.getLogger("fairrisk")

DEFAULT_THRESHOLD = 0.075


def _as_float_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValidationError(f"{name}: must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def _check_binary(y: np.ndarray):
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError("labels must be 0 or 1")


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average rank of their block."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_roc(y_true, scores) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(equal)."""
    y = _as_float_array(y_true, "y_true")
    s = _as_float_array(scores, "scores")
    if y.shape != s.shape:
        raise ValidationError("y_true and scores must have the same length")
    _check_binary(y)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auc_roc needs both classes present")
    ranks = _average_ranks(s)
    rank_sum = float(ranks[y == 1.0].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_prc(y_true, scores) -> float:
    """Average precision with block-end precision shared across ties."""
    y = _as_float_array(y_true, "y_true")
    s = _as_float_array(scores, "scores")
    if y.shape != s.shape:
        raise ValidationError("y_true and scores must have the same length")
    _check_binary(y)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("auc_prc needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = 0
    total = 0
    ap = 0.0
    i = 0
    n = len(y)
    while i < n:
        j = i
        while j + 1 < n and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        block_pos = int(y_sorted[i : j + 1].sum())
        tp += block_pos
        total += j - i + 1
        precision = tp / total
        ap += block_pos * precision
        i = j + 1
    return ap / n_pos


def brier_score(y_true, scores) -> float:
    if np.asarray(y_true).size == 0:
        raise UndefinedMetricError("brier_score: empty input")
    y = _as_float_array(y_true, "y_true")
    s = _as_float_array(scores, "scores")
    if y.shape != s.shape:
        raise ValidationError("y_true and scores must have the same length")
    _check_binary(y)
    return float(np.mean((s - y) ** 2))


@dataclass(frozen=True)
class ConfusionAtThreshold:
    """Counts and rates at a fixed score threshold (predict 1 iff >= T).

    Rates whose denominator is zero are None.
    """

    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    tpr: Optional[float]
    fnr: Optional[float]
    fpr: Optional[float]
    tnr: Optional[float]
    ppv: Optional[float]
    positive_rate: float


def confusion_at(y_true, scores, threshold: float) -> ConfusionAtThreshold:
    y = _as_float_array(y_true, "y_true")
    s = _as_float_array(scores, "scores")
    if y.shape != s.shape:
        raise ValidationError("y_true and scores must have the same length")
    _check_binary(y)
    pred = s >= threshold
    pos = y == 1.0
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))

    def rate(num: int, den: int) -> Optional[float]:
        return num / den if den > 0 else None

    return ConfusionAtThreshold(
        threshold=threshold,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        tpr=rate(tp, tp + fn),
        fnr=rate(fn, tp + fn),
        fpr=rate(fp, fp + tn),
        tnr=rate(tn, fp + tn),
        ppv=rate(tp, tp + fp),
        positive_rate=(tp + fp) / len(y),
    )


def coefficient_of_variation(values: Sequence[Optional[float]]) -> float:
    """Population std over mean, skipping undefined entries with a warning."""
    defined = [float(v) for v in values if v is not None]
    skipped = len(values) - len(defined)
    if skipped:
        logger.warning(
            "coefficient_of_variation: skipping %d undefined group rate(s)", skipped
        )
    if not defined:
        raise UndefinedMetricError("coefficient_of_variation: no defined values")
    arr = np.asarray(defined, dtype=np.float64)
    mean = float(arr.mean())
    if mean == 0.0:
        raise UndefinedMetricError("coefficient_of_variation: mean is zero")
    if arr.min() == arr.max():
        return 0.0
    return float(arr.std()) / mean


def emd_1d(a, b) -> float:
    """Exact earth mover's distance between two 1-D samples.

    Both samples carry total mass 1. Equals the integral of the absolute
    difference of the empirical CDFs.
    """
    if np.asarray(a).size == 0 or np.asarray(b).size == 0:
        raise UndefinedMetricError("emd_1d: empty sample")
    xa = np.sort(_as_float_array(a, "a"))
    xb = np.sort(_as_float_array(b, "b"))
    support = np.sort(np.concatenate([xa, xb]))
    deltas = np.diff(support)
    if deltas.size == 0:
        return 0.0
    points = support[:-1]
    Fa = np.searchsorted(xa, points, side="right") / len(xa)
    Fb = np.searchsorted(xb, points, side="right") / len(xb)
    return float(np.sum(np.abs(Fa - Fb) * deltas))


def mean_pairwise_emd(samples: Sequence[np.ndarray]) -> Optional[float]:
    """Mean EMD over all pairs of non-empty samples; None if < 2 exist."""
    usable = [np.asarray(s, dtype=np.float64) for s in samples if len(s) > 0]
    if len(usable) < 2:
        return None
    total = 0.0
    n_pairs = 0
    for i in range(len(usable)):
        for j in range(i + 1, len(usable)):
            total += emd_1d(usable[i], usable[j])
            n_pairs += 1
    return total / n_pairs
