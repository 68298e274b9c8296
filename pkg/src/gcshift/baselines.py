"""Competing classifiers: kernel-density plug-in (PMLE prior or ideal prior)
and KNN posteriors with EM prior adjustment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from gcshift.classifier import PluginClassifier, argmax_label
from gcshift.data import Dataset, DataError, class_proportions, split
from gcshift.proportions import (
    RatioWeights,
    TargetProportionEstimate,
    em_from_posteriors,
    solve_pmle,
)

BANDWIDTH_GRID = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5)
NEIGHBOR_GRID = (1, 3, 5, 11, 21, 51)

# exp() of larger log-ratios overflows
_LOG_RATIO_CAP = 700.0
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _class_points(data: Dataset) -> list[np.ndarray]:
    if data.labels is None:
        raise DataError("training data must be labeled")
    pts = [data.features[data.labels == c] for c in range(1, data.k + 1)]
    for c, p in enumerate(pts, start=1):
        if len(p) == 0:
            raise DataError(f"class {c} has no training points")
    return pts


@dataclass(frozen=True)
class KdeModel:
    """Per-class Gaussian product-kernel density estimates with one bandwidth."""

    points: tuple[np.ndarray, ...]
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if any(len(p) == 0 for p in self.points):
            raise DataError("every class needs at least one training point")

    @classmethod
    def fit(cls, data: Dataset, bandwidth: float) -> "KdeModel":
        return cls(tuple(_class_points(data)), float(bandwidth))

    @property
    def k(self) -> int:
        return len(self.points)

    def log_density(self, label: int, x: np.ndarray) -> np.ndarray:
        pts = self.points[label - 1]
        x = np.atleast_2d(np.asarray(x, dtype=float))
        b = self.bandwidth
        d = x.shape[1]
        out = np.empty(x.shape[0])
        step = max(1, 2_000_000 // max(1, len(pts) * d))
        for s in range(0, x.shape[0], step):
            diff = (x[s:s + step, None, :] - pts[None, :, :]) / b
            logk = -0.5 * np.sum(diff * diff, axis=2) - d * (_LOG_SQRT_2PI + np.log(b))
            out[s:s + step] = logsumexp(logk, axis=1) - np.log(len(pts))
        return out

    def log_densities(self, x: np.ndarray) -> np.ndarray:
        return np.column_stack([self.log_density(c, x) for c in range(1, self.k + 1)])


def kde_density(m: KdeModel, label: int, x: np.ndarray) -> np.ndarray:
    """``(1/n_y) sum_i prod_j phi((x_j - X_ij) / b) / b`` for each row of ``x``."""
    return np.exp(m.log_density(label, x))


def kde_ratio_weights(m: KdeModel, x: np.ndarray) -> RatioWeights:
    ld = m.log_densities(x)
    log_r = np.clip(ld[:, :-1] - ld[:, -1:], -_LOG_RATIO_CAP, _LOG_RATIO_CAP)
    return RatioWeights.from_ratios(np.exp(log_r))


@dataclass(frozen=True)
class KdeClassifier:
    """Argmax of ``prior_l * P_hat(x | l)``."""

    kde: KdeModel
    prior: np.ndarray
    estimate: TargetProportionEstimate | None = None

    def eta_q(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            s = self.kde.log_densities(x) + np.log(self.prior)
        s -= s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return argmax_label(self.kde.log_densities(x) + np.log(self.prior))


def maity_pc(source: Dataset, target: Dataset, bandwidth: float) -> KdeClassifier:
    """KDE class densities, prior by PMLE on the KDE density ratios."""
    kde = KdeModel.fit(source, bandwidth)
    est = solve_pmle(kde_ratio_weights(kde, target.features))
    return KdeClassifier(kde, est.pi_Q, est)


def maity_ic(source: Dataset, target_with_labels: Dataset, bandwidth: float) -> KdeClassifier:
    """Same KDE rule with the prior set to the target label frequencies."""
    if target_with_labels.labels is None:
        raise DataError("the ideal-prior baseline needs target labels")
    kde = KdeModel.fit(source, bandwidth)
    return KdeClassifier(kde, class_proportions(target_with_labels))


@dataclass(frozen=True)
class KnnModel:
    features: np.ndarray
    labels: np.ndarray
    k: int
    neighbors: int

    def __post_init__(self):
        if len(self.features) == 0:
            raise DataError("empty KNN training set")
        if not 1 <= self.neighbors <= len(self.features):
            raise ValueError(f"neighbors must lie in 1..{len(self.features)}, got {self.neighbors}")

    @classmethod
    def fit(cls, data: Dataset, neighbors: int) -> "KnnModel":
        if data.labels is None:
            raise DataError("KNN training data must be labeled")
        return cls(data.features, data.labels, data.k, int(neighbors))

    @property
    def pi_P(self) -> np.ndarray:
        return np.bincount(self.labels - 1, minlength=self.k) / len(self.labels)

    def neighbor_index(self, x: np.ndarray) -> np.ndarray:
        """Indices of the nearest rows; equal distances keep the lower row first."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, kk = len(self.features), self.neighbors
        out = np.empty((x.shape[0], kk), dtype=np.int64)
        step = max(1, 2_000_000 // max(1, n * x.shape[1]))
        for s in range(0, x.shape[0], step):
            diff = x[s:s + step, None, :] - self.features[None, :, :]
            dist = np.sum(diff * diff, axis=2)
            out[s:s + step] = np.argsort(dist, axis=1, kind="stable")[:, :kk]
        return out

    def eta(self, x: np.ndarray) -> np.ndarray:
        nb = self.labels[self.neighbor_index(x)]
        counts = np.stack([(nb == c).sum(axis=1) for c in range(1, self.k + 1)], axis=1)
        return counts / self.neighbors


def knn_eta(m: KnnModel, x: np.ndarray) -> np.ndarray:
    return m.eta(x)


@dataclass(frozen=True)
class SaerensClassifier:
    knn: KnnModel
    estimate: TargetProportionEstimate

    @property
    def prior(self) -> np.ndarray:
        return self.estimate.pi_Q

    def predict(self, x: np.ndarray) -> np.ndarray:
        return PluginClassifier(self.knn, self.estimate.pi_Q).predict(x)


def saerens_classifier(source: Dataset, target: Dataset, neighbors: int) -> SaerensClassifier:
    """KNN source posteriors, EM-adjusted prior, plug-in argmax."""
    knn = KnnModel.fit(source, neighbors)
    est = em_from_posteriors(knn.eta(target.features), knn.pi_P)
    return SaerensClassifier(knn, est)


def _first_best(scores: Sequence[float], values: Sequence):
    best = int(np.argmax(np.asarray(scores)))
    return values[best]


def tune_bandwidth(source: Dataset, grid: Sequence[float] = BANDWIDTH_GRID,
                   valid_fraction: float = 0.3, seed: int = 0) -> float:
    """Bandwidth with the best source-validation accuracy (ties: earlier entry)."""
    train, valid = split(source, 1.0 - valid_fraction, seed)
    prior = np.maximum(class_proportions(train), 1e-300)
    acc = []
    for b in grid:
        try:
            clf = KdeClassifier(KdeModel.fit(train, b), prior)
        except DataError:
            acc.append(-np.inf)
            continue
        acc.append(np.mean(clf.predict(valid.features) == valid.labels))
    return float(_first_best(acc, list(grid)))


def tune_neighbors(source: Dataset, grid: Sequence[int] = NEIGHBOR_GRID,
                   valid_fraction: float = 0.3, seed: int = 0) -> int:
    """Neighbourhood size with the best source-validation accuracy."""
    train, valid = split(source, 1.0 - valid_fraction, seed)
    usable = [g for g in grid if g <= train.n] or [train.n]
    acc = []
    for kk in usable:
        m = KnnModel.fit(train, kk)
        acc.append(np.mean(argmax_label(m.eta(valid.features)) == valid.labels))
    return int(_first_best(acc, usable))
