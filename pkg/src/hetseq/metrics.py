"""Ranking metrics (AUC, average precision) and test cross-entropy."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

PROB_CLAMP = 1e-12


class MetricUndefined(ValueError):
    """The label set cannot support the requested metric."""


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError(f"scores {self.scores.shape} and labels {self.labels.shape} must be equal-length vectors")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.scores)


def auc(scored: ScoredSet) -> float:
    """Mann-Whitney rank-sum AUC; tied scores get half credit."""
    pos = scored.labels == 1
    n_pos = int(pos.sum())
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefined(f"AUC needs both classes (positives={n_pos}, negatives={n_neg})")
    ranks = rankdata(scored.scores, method="average")
    # rank sums are multiples of 0.5, so this numerator is exact
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scored: ScoredSet) -> float:
    """Mean of precision-at-rank over the ranks holding positives.

    Rank 1 is the highest score; tied scores keep input order.
    """
    n_pos = int(scored.labels.sum())
    if n_pos == 0:
        raise MetricUndefined("average precision needs at least one positive")
    order = np.argsort(-scored.scores, kind="stable")
    hits = scored.labels[order]
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return math.fsum(precision[hits == 1]) / n_pos


def test_entropy(scored: ScoredSet) -> float:
    """Mean cross-entropy of the scores against the labels."""
    if len(scored) == 0:
        return 0.0
    y = np.clip(scored.scores, PROB_CLAMP, 1.0 - PROB_CLAMP)
    lab = scored.labels
    return float(np.mean(-(lab * np.log(y) + (1 - lab) * np.log(1.0 - y))))


test_entropy.__test__ = False  # not a pytest test despite the name


def report(scored: ScoredSet) -> dict:
    """Evaluation report; undefined metrics come out as null."""
    out = {"n": len(scored), "positive_rate": float(scored.labels.mean()) if len(scored) else 0.0}
    for key, fn in (("auc", auc), ("ap", average_precision)):
        try:
            out[key] = fn(scored)
        except MetricUndefined:
            out[key] = None
    out["entropy"] = test_entropy(scored)
    return out


def format_report(rep: dict) -> str:
    return json.dumps(rep, sort_keys=True, indent=2) + "\n"
