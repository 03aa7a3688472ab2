"""Protein-centric Fmax and micro-averaged AUPR."""

import numpy as np

FMAX_GRID = np.arange(1, 101) / 100.0


class MetricError(ValueError):
    pass


class NoPositiveLabels(MetricError):
    pass


class DegenerateLabels(MetricError):
    pass


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise MetricError(f"scores {scores.shape} and labels {labels.shape} must be matching 2-d arrays")
    return scores, labels


def fmax(scores, labels, grid=FMAX_GRID):
    """CAFA Fmax over ``grid`` thresholds.

    Precision averages over proteins with at least one score above the
    threshold; recall averages over proteins with at least one true label.
    """
    scores, labels = _check(scores, labels)
    if not labels.any():
        raise NoPositiveLabels("fmax needs at least one positive label")
    n_true = labels.sum(axis=1)
    has_true = n_true > 0
    best = 0.0
    for t in grid:
        called = scores >= t
        n_called = called.sum(axis=1)
        tp = (called & labels).sum(axis=1)
        covered = n_called > 0
        if not covered.any():
            continue
        pr = float(np.mean(tp[covered] / n_called[covered]))
        rc = float(np.mean(tp[has_true] / n_true[has_true]))
        if pr + rc > 0:
            best = max(best, 2 * pr * rc / (pr + rc))
    return best


def aupr(scores, labels):
    """Area under the micro-averaged precision-recall step curve; tied scores share one point."""
    scores, labels = _check(scores, labels)
    s = scores.ravel()
    y = labels.ravel()
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise DegenerateLabels("aupr needs both positive and negative labels")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    called = ends + 1
    precision = tp / called
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
