"""Binary classification metrics: confusion counts, accuracy, sensitivity, specificity, ROC AUC.

Undefined metrics (a zero denominator, or AUC with one class present) are
returned as ``None`` rather than 0.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class BinaryConfusion:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(preds, truths, positive: int = 1) -> BinaryConfusion:
    preds = np.asarray(preds).reshape(-1)
    truths = np.asarray(truths).reshape(-1)
    if preds.shape != truths.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions, {truths.size} truths")
    if positive not in (0, 1):
        raise ValueError("positive class must be 0 or 1")
    labels = set(np.unique(preds).tolist()) | set(np.unique(truths).tolist())
    if not labels <= {0, 1}:
        raise ValueError(f"non-binary labels {sorted(labels)}")
    p, t = preds == positive, truths == positive
    return BinaryConfusion(tp=int(np.sum(p & t)), tn=int(np.sum(~p & ~t)),
                           fp=int(np.sum(p & ~t)), fn=int(np.sum(~p & t)))


def _ratio(num, den):
    return num / den if den > 0 else None


def accuracy(c: BinaryConfusion):
    return _ratio(c.tp + c.tn, c.total)


def sensitivity(c: BinaryConfusion):
    return _ratio(c.tp, c.tp + c.fn)


def specificity(c: BinaryConfusion):
    return _ratio(c.tn, c.tn + c.fp)


def roc_auc(scores, truths, positive: int = 1):
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    pos = np.asarray(truths).reshape(-1) == positive
    if scores.shape != pos.shape:
        raise ValueError("length mismatch")
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def evaluation_report(preds, truths, scores=None, positive: int = 1) -> dict:
    c = confusion(preds, truths, positive)
    out = {
        "accuracy": accuracy(c),
        "sensitivity": sensitivity(c),
        "specificity": specificity(c),
        "auc": roc_auc(scores, truths, positive) if scores is not None else None,
        "confusion": asdict(c),
    }
    out["undefined_metrics"] = [k for k in ("accuracy", "sensitivity", "specificity", "auc") if out[k] is None]
    return out
