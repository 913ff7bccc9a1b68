"""Threshold-free ranking metrics and the evaluation report.

Score convention throughout: higher means more likely generated; labels are
1 for generated, 0 for real.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingleClass


def _check_two_classes(labels: np.ndarray, where: str):
    if labels.min() == labels.max():
        raise SingleClass(f"{where}: need both classes present")


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the average rank."""
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney rank statistic (ties count half); equals trapezoidal
    integration of the ROC curve."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    _check_two_classes(labels, "roc_auc")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    ranks = _average_ranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """Step-interpolated PR area: mean over positives of precision at each
    positive's rank, scores descending. Ties break by original sample order
    (stable sort)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    _check_two_classes(labels, "average_precision")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order] == 1
    cum_pos = np.cumsum(hits)
    ranks = np.arange(1, len(labels) + 1)
    precision_at_pos = cum_pos[hits] / ranks[hits]
    return float(precision_at_pos.mean())


def f1_at_threshold(scores, labels, threshold: float = 0.5) -> float:
    """F1 of the generated class with predictions score >= threshold;
    0 when precision + recall is 0."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    _check_two_classes(labels, "f1_at_threshold")
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2 * tp + fp + fn)


@dataclass
class MetricsReport:
    auc_roc: float
    ap: float
    f1_at_half: float
    n_pos: int
    n_neg: int
    per_sample: list[dict]

    def to_dict(self) -> dict:
        return {
            "auc_roc": self.auc_roc,
            "ap": self.ap,
            "f1": self.f1_at_half,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "per_sample": self.per_sample,
        }


def compute_report(ids, scores, labels) -> MetricsReport:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    _check_two_classes(labels, "compute_report")
    per_sample = [
        {"id": i, "label": "generated" if l == 1 else "real", "score": float(s)}
        for i, s, l in zip(ids, scores, labels)
    ]
    return MetricsReport(
        auc_roc=roc_auc(scores, labels),
        ap=average_precision(scores, labels),
        f1_at_half=f1_at_threshold(scores, labels),
        n_pos=int(labels.sum()),
        n_neg=int(len(labels) - labels.sum()),
        per_sample=per_sample,
    )
