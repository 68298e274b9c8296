"""Per-class density-ratio screen for general conditional shift.

For each class ``y`` a logistic regression separates target from source
features; the fitted odds times ``n_P,y / n_Q,y`` estimate
``r_y(x) = Q(x | y) / P(x | y)``.  Under the shift model every class has the
same ratio, so the pairwise differences ``r_l - r_m`` should sit near zero.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from gcshift.data import Dataset, DataError, write_csv
from gcshift.seeding import make_rng

COEF_NORM_CAP = 50.0
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class LogisticRatio:
    """Linear-logit density ratio ``(n_P / n_Q) * exp(intercept + coef'x)``."""

    intercept: float
    coef: np.ndarray
    n_source: int
    n_target: int
    iterations: int
    separated: bool = False
    loglik_trace: tuple[float, ...] = ()

    def log_ratio(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.log(self.n_source / self.n_target) + self.intercept + x @ self.coef

    def ratio(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_ratio(x))

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "coef": self.coef.tolist(),
                "n_source": self.n_source, "n_target": self.n_target,
                "iterations": self.iterations, "separated": self.separated}


def _loglik(z: np.ndarray, t: np.ndarray, beta: np.ndarray) -> float:
    eta = z @ beta
    return float(np.mean(t * eta - np.logaddexp(0.0, eta)))


def fit_ratio(source_y, target_y, tol: float = 1e-8, max_iter: int = 200) -> LogisticRatio:
    """Fit the domain-indicator logistic model (1 = target) with an intercept.

    Newton steps with step halving keep the log-likelihood non-decreasing;
    iteration stops once the gradient norm of the mean log-likelihood falls
    below ``tol``.  Under perfect separation the coefficient vector is capped
    at norm 50 and flagged.
    """
    xs = np.atleast_2d(np.asarray(getattr(source_y, "features", source_y), dtype=float))
    xq = np.atleast_2d(np.asarray(getattr(target_y, "features", target_y), dtype=float))
    if xs.shape[0] == 0 or xq.shape[0] == 0:
        raise DataError("both samples must be non-empty")
    if xs.shape[1] != xq.shape[1]:
        raise DataError("source and target differ in dimension")
    x = np.vstack([xs, xq])
    t = np.concatenate([np.zeros(len(xs)), np.ones(len(xq))])
    z = np.column_stack([np.ones(len(x)), x])
    beta = np.zeros(z.shape[1])
    ll = _loglik(z, t, beta)
    trace = [ll]
    separated = False
    it = 0
    for it in range(1, max_iter + 1):
        p = 0.5 * (1.0 + np.tanh(0.5 * (z @ beta)))
        grad = z.T @ (t - p) / len(t)
        if np.linalg.norm(grad) < tol:
            it -= 1
            break
        w = p * (1.0 - p)
        hess = (z * w[:, None]).T @ z / len(t) + 1e-12 * np.eye(z.shape[1])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        s = 1.0
        while s > 1e-10:
            cand = beta + s * step
            cll = _loglik(z, t, cand)
            if cll >= ll:
                break
            s *= 0.5
        else:
            break
        beta, ll = cand, cll
        trace.append(ll)
        if np.linalg.norm(beta[1:]) > COEF_NORM_CAP:
            separated = True
            beta[1:] *= COEF_NORM_CAP / np.linalg.norm(beta[1:])
            break
    return LogisticRatio(float(beta[0]), beta[1:].copy(), len(xs), len(xq), it, separated, tuple(trace))


@dataclass
class RatioDiagnostic:
    fits: dict[int, LogisticRatio]
    ratios: dict[int, np.ndarray]
    differences: dict[tuple[int, int], np.ndarray]
    bins: int = 30
    summaries: dict = field(default_factory=dict)

    def histogram(self, values: np.ndarray):
        return np.histogram(values, bins=self.bins)

    def median_abs_difference(self, pair=(1, 2)) -> float:
        return float(np.median(np.abs(self.differences[pair])))

    def to_dict(self) -> dict:
        return {
            "coefficients": {str(y): f.to_dict() for y, f in self.fits.items()},
            "summaries": self.summaries,
            "bins": self.bins,
        }

    def write(self, json_path, csv_path, config: dict | None = None) -> None:
        doc = self.to_dict()
        if config is not None:
            doc["config"] = config
        with open(json_path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
        rows = []
        named = [(f"r{y}", v) for y, v in self.ratios.items()]
        named += [(f"r{a}-r{b}", v) for (a, b), v in self.differences.items()]
        for name, v in named:
            counts, edges = self.histogram(v)
            for i, c in enumerate(counts):
                rows.append((name, i, float(edges[i]), float(edges[i + 1]), int(c)))
        write_csv(csv_path, ["quantity", "bin", "left", "right", "count"], rows)


def _summary(v: np.ndarray) -> dict:
    q = np.quantile(v, QUANTILES)
    return {"mean": float(np.mean(v)), "median_abs": float(np.median(np.abs(v))),
            "quantiles": {str(a): float(b) for a, b in zip(QUANTILES, q)}}


def _halves(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    m = n // 2
    return np.sort(perm[:m]), np.sort(perm[m:])


def gcs_report(source: Dataset, target_with_labels: Dataset, bins: int = 30,
               seed: int = 0) -> RatioDiagnostic:
    """Fit per-class ratios on a random half of each domain; evaluate on the rest.

    Ratios and their pairwise differences are evaluated at the pooled
    held-out source and target features.
    """
    if source.labels is None or target_with_labels.labels is None:
        raise DataError("the shift diagnostic needs labels in both domains")
    if source.d != target_with_labels.d:
        raise DataError("source and target differ in dimension")
    rng = make_rng(seed, "gcs-report")
    s_tr, s_te = _halves(source.n, rng)
    q_tr, q_te = _halves(target_with_labels.n, rng)
    src_tr, tgt_tr = source.subset(s_tr), target_with_labels.subset(q_tr)
    evaluate = np.vstack([source.features[s_te], target_with_labels.features[q_te]])

    k = max(source.k, target_with_labels.k)
    fits, ratios = {}, {}
    for y in range(1, k + 1):
        xs = src_tr.features[src_tr.labels == y]
        xq = tgt_tr.features[tgt_tr.labels == y]
        if len(xs) == 0 or len(xq) == 0:
            raise DataError(f"class {y} is absent from the source or target training half")
        fits[y] = fit_ratio(xs, xq)
        ratios[y] = fits[y].ratio(evaluate)
    diffs = {(a, b): ratios[a] - ratios[b]
             for a in range(1, k + 1) for b in range(a + 1, k + 1)}
    summaries = {f"r{y}": _summary(v) for y, v in ratios.items()}
    summaries.update({f"r{a}-r{b}": _summary(v) for (a, b), v in diffs.items()})
    summaries["n_evaluated"] = int(len(evaluate))
    return RatioDiagnostic(fits, ratios, diffs, bins, summaries)
