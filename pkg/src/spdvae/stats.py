"""Balanced accuracy and the Wilcoxon signed-rank test."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps

from .errors import DegenerateTest, InvalidInput

EXACT_MAX_N = 25


def balanced_accuracy(predictions, labels, classes=None) -> float:
    """Mean of per-class recalls over the classes present in ``labels``
    (or the given ``classes``, all of which must be present)."""
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape:
        raise InvalidInput(f"length mismatch: {pred.shape} vs {lab.shape}")
    classes = np.unique(lab) if classes is None else np.asarray(classes)
    if len(classes) < 2:
        raise InvalidInput("balanced accuracy needs both classes present in labels")
    recalls = []
    for k in classes:
        mask = lab == k
        if not mask.any():
            raise InvalidInput(f"class {k} absent from labels")
        recalls.append(np.mean(pred[mask] == k))
    return float(np.mean(recalls))


def signed_ranks(diff: np.ndarray) -> np.ndarray:
    """Average ranks of ``|diff|`` carrying the sign of ``diff``."""
    return np.sign(diff) * sps.rankdata(np.abs(diff))


def _exact_upper_tail(ranks2: np.ndarray, t2: int) -> tuple[float, float]:
    """P(T <= t) and P(T >= t) for the sum of positive doubled ranks under
    random signs, by dynamic programming over the rank multiset."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    probs = counts / counts.sum()
    return float(probs[: t2 + 1].sum()), float(probs[t2:].sum())


def wilcoxon_signed_rank(a, b, exact_max_n: int = EXACT_MAX_N) -> float:
    """Two-sided p-value for paired samples.

    Zero differences are discarded. Up to ``exact_max_n`` non-zero pairs the
    null distribution of the positive-rank sum is computed exactly (ties
    use average ranks); beyond that a normal approximation with tie and
    continuity corrections is used. ``p = min(1, 2 min(P(T<=t), P(T>=t)))``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInput("paired samples must be 1-D with equal lengths")
    diff = a - b
    diff = diff[diff != 0]
    if len(diff) == 0:
        raise DegenerateTest("all paired differences are zero")
    if len(diff) < 5:
        raise InvalidInput(f"need at least 5 non-zero differences, got {len(diff)}")
    ranks = sps.rankdata(np.abs(diff))
    t_plus = float(ranks[diff > 0].sum())
    n = len(diff)
    if n <= exact_max_n:
        ranks2 = np.rint(2 * ranks).astype(int)
        lower, upper = _exact_upper_tail(ranks2, int(round(2 * t_plus)))
        return min(1.0, 2.0 * min(lower, upper))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = (abs(t_plus - mean) - 0.5) / math.sqrt(var)
    return min(1.0, float(2.0 * sps.norm.sf(max(z, 0.0))))
