"""Offline evaluation: AUC, logloss and the user-item cosine case study."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .data import Dataset
from .errors import UndefinedMetricError
from .losses import bce_loss
from .model import ModelParams, calibrate, predict, user_item_vectors

HIST_BINS = 40


def auc(scores, labels) -> float:
    """Probability a random positive outscores a random negative (ties count 1/2).

    Mann-Whitney form over average ranks, O(N log N).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(scores, labels) -> float:
    return bce_loss(np.asarray(scores, dtype=np.float64), np.asarray(labels))[0]


@dataclass
class MetricsReport:
    auc: float
    logloss: float
    n_eval: int
    n_pos: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def predict_dataset(params: ModelParams, data: Dataset, batch_size: int = 4096) -> np.ndarray:
    out = [predict(params, b) for b in data.iter_batches(batch_size, training=False)]
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(params: ModelParams, data: Dataset, calibrate_ratio: float | None = None) -> MetricsReport:
    """Metrics over the full (never down-sampled) evaluation set."""
    p = predict_dataset(params, data)
    if calibrate_ratio is not None:
        p = calibrate(p, calibrate_ratio)
    labels = data.labels
    return MetricsReport(auc(p, labels), logloss(p, labels), int(labels.size), int(labels.sum()))


@dataclass
class RelevanceHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    cosines: np.ndarray

    def to_tsv(self) -> str:
        lines = ["bin_left\tbin_right\tcount"]
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            lines.append(f"{lo:.4f}\t{hi:.4f}\t{int(c)}")
        return "\n".join(lines) + "\n"


def relevance_histogram(cosines: np.ndarray, bins: int = HIST_BINS) -> RelevanceHistogram:
    if cosines.size == 0:
        raise UndefinedMetricError("relevance case study needs at least one positive sample")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    # clip so floating round-off at +-1 stays inside the outer bins
    counts, _ = np.histogram(np.clip(cosines, -1.0, 1.0), bins=edges)
    return RelevanceHistogram(edges, counts, float(cosines.mean()), cosines)


def relevance_case_study(
    params: ModelParams, data: Dataset, k: int, rng: np.random.Generator, bins: int = HIST_BINS
) -> RelevanceHistogram:
    """Cosine between user-side and item-side vectors over sampled positives."""
    pos = np.flatnonzero(data.labels == 1)
    if pos.size == 0 or k < 1:
        raise UndefinedMetricError("relevance case study needs at least one positive sample")
    chosen = np.sort(rng.choice(pos, size=min(k, pos.size), replace=False))
    batch = data.take(chosen)
    user, item = user_item_vectors(params, batch)
    nu = np.maximum(np.linalg.norm(user, axis=1), 1e-12)
    ni = np.maximum(np.linalg.norm(item, axis=1), 1e-12)
    cos = np.sum(user * item, axis=1) / (nu * ni)
    return relevance_histogram(cos, bins)
