"""Detection metrics (positive class = generated) and PSNR."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imagio import Raster

POSITIVE = "generated"
NEGATIVE = "real"


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredLabel:
    score: float  # larger means more likely generated, i.e. -decision
    label: str

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise MetricError(f"score must be finite, got {self.score}")
        if self.label not in (POSITIVE, NEGATIVE):
            raise MetricError(f"label must be 'real' or 'generated', got {self.label!r}")


def _check_pairs(preds: Sequence[str], labels: Sequence[str]):
    if len(preds) != len(labels):
        raise MetricError(f"length mismatch: {len(preds)} predictions, {len(labels)} labels")
    if not preds:
        raise MetricError("no predictions")


def accuracy(preds: Sequence[str], labels: Sequence[str]) -> float:
    _check_pairs(preds, labels)
    return sum(p == t for p, t in zip(preds, labels)) / len(preds)


def precision_recall(preds: Sequence[str], labels: Sequence[str]):
    _check_pairs(preds, labels)
    tp = sum(p == POSITIVE and t == POSITIVE for p, t in zip(preds, labels))
    fp = sum(p == POSITIVE and t != POSITIVE for p, t in zip(preds, labels))
    fn = sum(p != POSITIVE and t == POSITIVE for p, t in zip(preds, labels))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def f1(preds: Sequence[str], labels: Sequence[str]) -> float:
    p, r = precision_recall(preds, labels)
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def average_precision(scored: Sequence[ScoredLabel]) -> float:
    """Step-wise AP: mean of precision at the rank of every positive.

    Items are ranked by descending score; equal scores keep input order.
    """
    n_pos = sum(s.label == POSITIVE for s in scored)
    if n_pos == 0:
        raise MetricError("average precision needs at least one generated example")
    order = sorted(range(len(scored)), key=lambda i: -scored[i].score)  # stable
    terms = []
    tp = 0
    for rank, idx in enumerate(order, start=1):
        if scored[idx].label == POSITIVE:
            tp += 1
            terms.append(tp / rank)
    return math.fsum(terms) / n_pos


def psnr(a: Raster, b: Raster) -> float:
    """PSNR in dB with peak 1.0; identical inputs give ``math.inf``."""
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def report(decisions: Sequence[float], labels: Sequence[str]) -> dict:
    """Evaluation report for decision values thresholded at zero."""
    if len(decisions) != len(labels):
        raise MetricError("decisions and labels differ in length")
    n_real = sum(t == NEGATIVE for t in labels)
    n_gen = sum(t == POSITIVE for t in labels)
    if n_real == 0 or n_gen == 0:
        raise MetricError("evaluation needs both real and generated examples")
    preds = [NEGATIVE if d >= 0 else POSITIVE for d in decisions]
    scored = [ScoredLabel(-float(d), t) for d, t in zip(decisions, labels)]
    return {
        "acc": accuracy(preds, labels),
        "ap": average_precision(scored),
        "f1": f1(preds, labels),
        "n_real": n_real,
        "n_generated": n_gen,
        "threshold": 0.0,
    }
