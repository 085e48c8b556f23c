"""Macro-averaged classification metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

__all__ = ["MetricsReport", "auroc", "classification_metrics", "METRIC_NAMES"]

METRIC_NAMES = ("accuracy", "f1", "auroc", "precision", "recall")


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    f1: float
    auroc: float
    precision: float
    recall: float
    # classes whose one-vs-rest AUROC was undefined and left out of the mean
    auroc_skipped: tuple[int, ...] = field(default=())

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}


def auroc(scores, positive) -> float:
    """Area under the ROC curve; tied scores count one half.

    Returns ``nan`` when either class is absent.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(s)  # average ranks handle ties
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _safe_ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def classification_metrics(y_true, proba, n_classes: int | None = None) -> MetricsReport:
    """Accuracy and macro precision/recall/F1/AUROC from class probabilities.

    Binary problems report the AUROC of class 1.  Classes missing from
    ``y_true`` (or the only class present) have no AUROC and are skipped.
    """
    y = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(proba, dtype=np.float64)
    if p.ndim != 2 or len(p) != len(y) or len(y) == 0:
        raise ValueError("proba must be (n, classes) with one row per label")
    c = n_classes or p.shape[1]
    pred = np.argmax(p, axis=1)

    precision, recall, f1 = [], [], []
    for k in range(c):
        tp = float(np.sum((pred == k) & (y == k)))
        fp = float(np.sum((pred == k) & (y != k)))
        fn = float(np.sum((pred != k) & (y == k)))
        pr, rc = _safe_ratio(tp, tp + fp), _safe_ratio(tp, tp + fn)
        precision.append(pr)
        recall.append(rc)
        f1.append(_safe_ratio(2 * pr * rc, pr + rc))

    classes = [1] if c == 2 else list(range(c))
    aucs, skipped = [], []
    for k in classes:
        a = auroc(p[:, k], y == k)
        if np.isnan(a):
            skipped.append(k)
        else:
            aucs.append(a)
    return MetricsReport(
        accuracy=float(np.mean(pred == y)),
        f1=float(np.mean(f1)),
        auroc=float(np.mean(aucs)) if aucs else float("nan"),
        precision=float(np.mean(precision)),
        recall=float(np.mean(recall)),
        auroc_skipped=tuple(skipped),
    )
