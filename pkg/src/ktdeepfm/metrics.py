"""ACC, AUC, NLL and F1 for mistake predictions (label 1 = mistake)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingleClass
from .model import PROB_EPS

COLUMNS = ("ACC", "AUC", "NLL", "F1")


def tied_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, tied values sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    n = len(x)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1]])
    ends = np.r_[starts[1:], n]
    run_rank = (starts + ends + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(run_rank, ends - starts)
    return ranks


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative, ties counting 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    rank_sum = tied_ranks(scores)[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def nll(scores, labels) -> float:
    p = np.clip(np.asarray(scores, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def acc_f1(scores, labels, threshold=0.5) -> tuple[float, float]:
    """Accuracy and F1 of the positive class; a score equal to the threshold counts positive."""
    pred = np.asarray(scores) >= threshold
    y = np.asarray(labels) == 1
    acc = float(np.mean(pred == y)) if len(y) else 0.0
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    if tp + fp == 0 and tp + fn == 0:
        return acc, 1.0
    if tp + fp == 0:
        return acc, 0.0
    return acc, 2.0 * tp / (2.0 * tp + fp + fn)


@dataclass(frozen=True)
class EvalReport:
    acc: float
    auc: float
    nll: float
    f1: float
    n: int
    threshold: float = 0.5

    def line(self) -> str:
        """Single machine-readable line."""
        return (
            f"acc={self.acc!r} auc={self.auc!r} nll={self.nll!r} f1={self.f1!r} "
            f"n={self.n} threshold={self.threshold!r}"
        )

    def table(self, name="model") -> str:
        width = max(len(name), 5)
        head = f"{'':<{width}}  " + "  ".join(f"{c:>6}" for c in COLUMNS)
        row = f"{name:<{width}}  " + "  ".join(
            f"{v:6.3f}" for v in (self.acc, self.auc, self.nll, self.f1)
        )
        return head + "\n" + row


def evaluate(scores, labels, threshold=0.5) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) == 0:
        raise ValueError("cannot evaluate an empty prediction set")
    acc, f1 = acc_f1(scores, labels, threshold)
    return EvalReport(acc, auc(scores, labels), nll(scores, labels), f1, len(scores), threshold)
