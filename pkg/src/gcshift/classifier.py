"""Plug-in target classifier, Bayes oracle and empirical excess risk.

The target posterior is the source posterior reweighted by ``pi_Q / pi_P``
and renormalised; the shift function ``h(x)`` multiplies every class
equally and cancels, so it is never estimated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from gcshift.data import check_simplex
from gcshift.proportions import EmptySourceClassError


def plugin_weights(pi_P, pi_Q) -> np.ndarray:
    pi_P, pi_Q = check_simplex(pi_P), check_simplex(pi_Q)
    if pi_P.shape != pi_Q.shape:
        raise ValueError("pi_P and pi_Q differ in length")
    if np.any(pi_P <= 0):
        raise EmptySourceClassError(f"empty source class in pi_P={pi_P}")
    return pi_Q / pi_P


def argmax_label(scores: np.ndarray) -> np.ndarray:
    """1-based argmax per row; exact ties go to the smallest label."""
    return np.argmax(np.atleast_2d(scores), axis=1) + 1


def reweighted_posterior(eta_P: np.ndarray, weights: np.ndarray) -> np.ndarray:
    s = np.atleast_2d(eta_P) * weights
    return s / s.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class PluginClassifier:
    """Source posterior model plus an estimate of the target proportions.

    ``model`` is anything with ``eta(x)`` and ``pi_P`` (a trained
    :class:`~gcshift.network.SourceModel`, a KNN model, or an exact
    posterior wrapper); features passed in are already scaled.
    """

    model: object
    pi_Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi_Q", check_simplex(self.pi_Q))
        plugin_weights(self.model.pi_P, self.pi_Q)

    @property
    def weights(self) -> np.ndarray:
        return plugin_weights(self.model.pi_P, self.pi_Q)

    def eta_q(self, x: np.ndarray) -> np.ndarray:
        return reweighted_posterior(self.model.eta(x), self.weights)

    def scores(self, x: np.ndarray, scale: float = 1.0) -> np.ndarray:
        """Unnormalised class scores ``scale * (pi_Q,l / pi_P,l) * eta_P,l(x)``."""
        return np.atleast_2d(self.model.eta(x)) * (scale * self.weights)

    def predict(self, x: np.ndarray, scale: float = 1.0) -> np.ndarray:
        return argmax_label(self.scores(x, scale))


def eta_q_hat(c: PluginClassifier, x: np.ndarray) -> np.ndarray:
    return c.eta_q(x)


def classify(c: PluginClassifier, x: np.ndarray) -> np.ndarray:
    return c.predict(x)


@dataclass(frozen=True)
class OracleClassifier:
    """Bayes rule from the true target posterior ``eta_Q`` (raw coordinates)."""

    eta_Q: Callable[[np.ndarray], np.ndarray]

    def predict(self, x_raw: np.ndarray) -> np.ndarray:
        return argmax_label(self.eta_Q(x_raw))


@dataclass(frozen=True)
class PosteriorModel:
    """Wrap a known posterior function so it plugs into :class:`PluginClassifier`."""

    eta_fn: Callable[[np.ndarray], np.ndarray]
    pi_P: np.ndarray

    def eta(self, x: np.ndarray) -> np.ndarray:
        return self.eta_fn(x)


def excess_risk(predictions, oracle_predictions, test_labels) -> float:
    """Paired empirical excess risk on one test sample.

    ``oracle_predictions`` may be an array of Bayes labels or an
    ``(OracleClassifier, test_features)`` pair.
    """
    if isinstance(oracle_predictions, tuple):
        oracle, feats = oracle_predictions
        oracle_predictions = oracle.predict(feats)
    pred = np.asarray(predictions)
    orc = np.asarray(oracle_predictions)
    y = np.asarray(test_labels)
    if not (pred.shape == orc.shape == y.shape):
        raise ValueError(f"length mismatch: {pred.shape}, {orc.shape}, {y.shape}")
    return float(np.mean(pred != y) - np.mean(orc != y))
