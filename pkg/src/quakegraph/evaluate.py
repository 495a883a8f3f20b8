"""ROC curves, AUC and threshold (minimum detection probability) metrics.

A timestep is classified as an earthquake when its probability is strictly
greater than the threshold.  ROC points are built with the same rule, so
:func:`tpr_fpr_at_mdp` at any curve threshold reproduces that point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

__all__ = ["RocCurve", "Rates", "roc_curve", "tpr_fpr_at_mdp", "optimal_mdp", "TABLE_MDPS"]

TABLE_MDPS = (0.55, 0.6, 0.71)

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass
class RocCurve:
    thresholds: np.ndarray  # descending
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return [(float(t), float(f), float(p)) for t, f, p in zip(self.thresholds, self.fpr, self.tpr)]


class Rates(NamedTuple):
    tpr: Optional[float]  # None when there are no positive labels
    fpr: Optional[float]  # None when there are no negative labels


def _flatten(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in size")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(bool)


def roc_curve(scores, labels) -> RocCurve:
    scores, pos = _flatten(scores, labels)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_curve needs at least one positive and one negative label")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    p = pos[order]
    distinct = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(p)[distinct]
    fp = (distinct + 1) - tp
    # threshold = a score value means "strictly above it"; the first point
    # (max score) predicts nothing, each later one admits the next score group
    thresholds = np.r_[s[distinct], np.nextafter(s[-1], -np.inf)]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    auc = float(_trapezoid(tpr, fpr))
    return RocCurve(thresholds, fpr, tpr, auc)


def tpr_fpr_at_mdp(probs, labels, mdp: float) -> Rates:
    """TPR and FPR over all stations and timesteps for ``prob > mdp``."""
    if np.isnan(mdp):
        raise ValueError("mdp is NaN")
    scores, pos = _flatten(probs, labels)
    pred = scores > mdp
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    tpr = float((pred & pos).sum() / n_pos) if n_pos else None
    fpr = float((pred & ~pos).sum() / n_neg) if n_neg else None
    return Rates(tpr, fpr)


def optimal_mdp(curve: RocCurve) -> tuple[float, float, float]:
    """Threshold whose (FPR, TPR) is nearest to (0, 1); ties go to the higher threshold."""
    if len(curve.thresholds) == 0:
        raise ValueError("empty ROC curve")
    dist = np.hypot(curve.fpr, 1.0 - curve.tpr)
    best = dist.min()
    candidates = np.nonzero(dist == best)[0]
    i = candidates[np.argmax(curve.thresholds[candidates])]
    return float(curve.thresholds[i]), float(curve.fpr[i]), float(curve.tpr[i])
