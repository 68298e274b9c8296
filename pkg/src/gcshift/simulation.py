"""Three binary simulation scenarios and the Monte-Carlo excess-risk harness.

Given the label, the four feature components are i.i.d.:

I    class 1 ~ uniform on {1,2,3,4}, class 2 ~ uniform on {1,2}; same in both domains.
II   class 1 ~ Beta(6, 2), class 2 ~ Beta(2, 6); same in both domains.
III  source: class 1 ~ Exp(mean e^0.5 - 1), class 2 ~ N(1, 1);
     target: class 1 ~ Exp(mean 1 - e^-0.5), class 2 ~ N(0, 1).

In III each component's target/source density ratio is exp(0.5 - t) in both
classes, so the conditional shift is h(x) = exp(2 - sum(x)) and label shift
fails.  The source prior is P(Y=1) = 0.75 throughout.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from gcshift.baselines import (
    maity_ic,
    maity_pc,
    saerens_classifier,
    tune_bandwidth,
    tune_neighbors,
)
from gcshift.classifier import OracleClassifier, PluginClassifier, excess_risk
from gcshift.data import Dataset, ScalingSpec, fit_scaling, write_csv
from gcshift.network import MlpConfig, grid_search, train_source
from gcshift.proportions import ratio_weights, solve_pmle
from gcshift.seeding import child_seed, make_rng

logger = logging.getLogger(__name__)

SCENARIOS = ("I", "II", "III")
SOURCE_PI1 = 0.75
D = 4
EXP_MEAN_SOURCE = math.exp(0.5) - 1.0
EXP_MEAN_TARGET = 1.0 - math.exp(-0.5)
NORMAL_MEAN_SOURCE = 1.0
NORMAL_MEAN_TARGET = 0.0
BETA_CLASS1 = (6.0, 2.0)
BETA_CLASS2 = (2.0, 6.0)
# 1 / B(6, 2) = 1 / B(2, 6)
BETA_NORM = 42.0

CLASSIFIERS = ("dnn-pc", "saerens", "maity-pc", "maity-ic", "bayes")
ESTIMATORS = ("dnn", "kernel", "knn")
_ESTIMATOR_SOURCE = {"dnn": "dnn-pc", "kernel": "maity-pc", "knn": "saerens"}


class SupportError(ValueError):
    """A raw feature lies outside a scenario's support."""


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "I"
    pi_Q1: float = 0.5
    n_P: int = 100
    n_Q: int = 400
    n_test: int = 2500
    master_seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; valid: {', '.join(SCENARIOS)}")
        if not 0.0 < self.pi_Q1 < 1.0:
            raise ValueError(f"pi_Q1 must lie in (0, 1), got {self.pi_Q1}")
        if min(self.n_P, self.n_Q, self.n_test) < 1:
            raise ValueError("sample sizes must be positive")

    def prior(self, domain: str) -> np.ndarray:
        if domain == "source":
            return np.array([SOURCE_PI1, 1.0 - SOURCE_PI1])
        if domain == "target":
            return np.array([self.pi_Q1, 1.0 - self.pi_Q1])
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")


# ---------------------------------------------------------------------------
# Per-component densities
# ---------------------------------------------------------------------------

def _log_exp_pdf(t: np.ndarray, mean: float) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(t >= 0, -np.log(mean) - t / mean, -np.inf)


def _log_normal_pdf(t: np.ndarray, mean: float) -> np.ndarray:
    return -0.5 * np.log(2 * np.pi) - 0.5 * (t - mean) ** 2


def exponential_class_ratio(t: np.ndarray) -> np.ndarray:
    """Target/source density ratio of one class-1 component (Exp means)."""
    t = np.asarray(t, dtype=float)
    return np.exp(_log_exp_pdf(t, EXP_MEAN_TARGET) - _log_exp_pdf(t, EXP_MEAN_SOURCE))


def normal_class_ratio(t: np.ndarray) -> np.ndarray:
    """Target/source density ratio of one class-2 component (unit-variance normals)."""
    t = np.asarray(t, dtype=float)
    return np.exp(_log_normal_pdf(t, NORMAL_MEAN_TARGET) - _log_normal_pdf(t, NORMAL_MEAN_SOURCE))


def shift_function(x_raw: np.ndarray) -> np.ndarray:
    """Scenario III shift ``h(x) = exp(2 + beta'x)`` with ``beta = -1``."""
    x = np.atleast_2d(np.asarray(x_raw, dtype=float))
    return np.exp(2.0 - x.sum(axis=1))


def class_log_densities(scenario: str, domain: str, x_raw: np.ndarray) -> np.ndarray:
    """``n x 2`` log joint component densities ``log prod_i p(x_i | y)``."""
    x = np.atleast_2d(np.asarray(x_raw, dtype=float))
    if x.shape[1] != D:
        raise ValueError(f"scenario features have dimension {D}, got {x.shape[1]}")
    if domain not in ("source", "target"):
        raise ValueError(f"domain must be 'source' or 'target', got {domain!r}")
    if scenario == "I":
        if np.any(x != np.round(x)) or np.any(x < 1) or np.any(x > 4):
            raise SupportError("scenario I features must be integers in 1..4")
        l1 = np.full(x.shape[0], D * np.log(0.25))
        with np.errstate(divide="ignore"):
            l2 = np.where(np.all(x <= 2, axis=1), D * np.log(0.5), -np.inf)
    elif scenario == "II":
        if np.any(x <= 0) or np.any(x >= 1):
            raise SupportError("scenario II features must lie in (0, 1)")
        lx, l1x = np.log(x), np.log1p(-x)
        l1 = np.sum(np.log(BETA_NORM) + 5 * lx + l1x, axis=1)
        l2 = np.sum(np.log(BETA_NORM) + lx + 5 * l1x, axis=1)
    elif scenario == "III":
        em = EXP_MEAN_SOURCE if domain == "source" else EXP_MEAN_TARGET
        nm = NORMAL_MEAN_SOURCE if domain == "source" else NORMAL_MEAN_TARGET
        l1 = np.sum(_log_exp_pdf(x, em), axis=1)
        l2 = np.sum(_log_normal_pdf(x, nm), axis=1)
    else:
        raise ValueError(f"unknown scenario {scenario!r}; valid: {', '.join(SCENARIOS)}")
    return np.column_stack([l1, l2])


def true_eta(spec: ScenarioSpec, domain: str, x_raw: np.ndarray) -> np.ndarray:
    """Exact class posteriors in ``domain`` at raw features (``n x 2``)."""
    single = np.ndim(x_raw) == 1
    ld = class_log_densities(spec.scenario, domain, x_raw)
    pi = spec.prior(domain)
    logit = np.log(pi[0]) + ld[:, 0] - np.log(pi[1]) - ld[:, 1]
    if np.any(np.isnan(logit)):
        raise SupportError("point has zero density under both classes")
    p1 = expit(logit)
    out = np.column_stack([p1, 1.0 - p1])
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _draw_components(scenario: str, domain: str, labels: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    n = labels.size
    c1 = labels == 1
    x = np.empty((n, D))
    n1, n2 = int(c1.sum()), int((~c1).sum())
    if scenario == "I":
        x[c1] = rng.integers(1, 5, size=(n1, D))
        x[~c1] = rng.integers(1, 3, size=(n2, D))
    elif scenario == "II":
        x[c1] = rng.beta(*BETA_CLASS1, size=(n1, D))
        x[~c1] = rng.beta(*BETA_CLASS2, size=(n2, D))
    else:
        em = EXP_MEAN_SOURCE if domain == "source" else EXP_MEAN_TARGET
        nm = NORMAL_MEAN_SOURCE if domain == "source" else NORMAL_MEAN_TARGET
        x[c1] = rng.exponential(em, size=(n1, D))
        x[~c1] = rng.normal(nm, 1.0, size=(n2, D))
    return x


def draw(spec: ScenarioSpec, domain: str, n: int, rng: np.random.Generator):
    """``n`` raw (features, labels) pairs from one domain."""
    p1 = spec.prior(domain)[0]
    labels = np.where(rng.random(n) < p1, 1, 2)
    return _draw_components(spec.scenario, domain, labels, rng), labels


@dataclass(frozen=True)
class SimulatedData:
    """One replication: scaled datasets plus raw test coordinates for the oracle."""

    source: Dataset
    target: Dataset
    target_labels: np.ndarray
    test: Dataset
    test_raw: np.ndarray
    scaling: ScalingSpec
    source_raw: np.ndarray
    target_raw: np.ndarray


def _scaling_for(spec: ScenarioSpec, source_raw: np.ndarray) -> ScalingSpec:
    if spec.scenario == "I":
        return ScalingSpec(np.ones(D), np.full(D, 4.0))
    if spec.scenario == "II":
        return ScalingSpec(np.zeros(D), np.ones(D))
    return fit_scaling(Dataset(source_raw))


def generate(spec: ScenarioSpec, seed: int | None = None) -> SimulatedData:
    """Draw source, target and test samples and map them into ``[0, 1]^4``.

    Scenario I uses the fixed map ``(t - 1) / 3``, II is already in the unit
    cube, III uses min/max scaling fitted on the source draw with clamping.
    """
    seed = spec.master_seed if seed is None else seed
    xs, ys = draw(spec, "source", spec.n_P, make_rng(seed, "source"))
    xq, yq = draw(spec, "target", spec.n_Q, make_rng(seed, "target"))
    xt, yt = draw(spec, "target", spec.n_test, make_rng(seed, "test"))
    sc = _scaling_for(spec, xs)
    cols = tuple(f"x{j + 1}" for j in range(D))
    return SimulatedData(
        source=Dataset(sc.transform(xs), ys, 2, cols),
        target=Dataset(sc.transform(xq), None, 2, cols),
        target_labels=yq,
        test=Dataset(sc.transform(xt), yt, 2, cols),
        test_raw=xt,
        scaling=sc,
        source_raw=xs,
        target_raw=xq,
    )


def class_shift_generator(n: int, seed: int, shift: float = 1.0, d: int = 2):
    """Labeled source/target pair that violates general conditional shift.

    Class ``y`` is ``N(m_y, I)`` with ``m_1 = 0`` and ``m_2 = 1``; in the
    target only class 1 moves by ``shift`` along every coordinate.  Returns
    raw ``(source, target)`` datasets with balanced priors.
    """
    out = []
    for domain in ("source", "target"):
        rng = make_rng(seed, "class-shift", domain)
        y = np.where(rng.random(n) < 0.5, 1, 2)
        mean = np.where(y == 1, 0.0, 1.0)
        if domain == "target":
            mean = mean + np.where(y == 1, shift, 0.0)
        x = mean[:, None] + rng.normal(size=(n, d))
        out.append(Dataset(x, y, 2))
    return tuple(out)


# ---------------------------------------------------------------------------
# Monte-Carlo experiment
# ---------------------------------------------------------------------------

# Candidate networks tried in every replication; validation loss picks one.
EXPERIMENT_GRID = tuple(MlpConfig(depth=depth, width=32, epochs=epochs)
                        for depth in (1, 2) for epochs in (100, 300))


@dataclass(frozen=True)
class MethodSettings:
    """Hyperparameter handling inside each replication.

    ``dnn_grid`` with more than one entry triggers a per-replication grid
    search on a source split; the chosen config is then refit on the full
    source sample.  Baseline bandwidth / neighbours are tuned the same way
    unless fixed.
    """

    dnn_grid: tuple[MlpConfig, ...] = EXPERIMENT_GRID
    valid_fraction: float = 0.3
    bandwidth: float | None = None
    neighbors: int | None = None


@dataclass
class ExperimentReport:
    spec: ScenarioSpec
    replications: int
    classifiers: tuple[str, ...]
    estimators: tuple[str, ...]
    excess_risk: dict[str, list[float]] = field(default_factory=dict)
    pi_hat: dict[str, list[float]] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)
    rep_index: dict[str, list[int]] = field(default_factory=dict)
    pi_rep_index: dict[str, list[int]] = field(default_factory=dict)

    def squared_errors(self, estimator: str) -> np.ndarray:
        return (np.asarray(self.pi_hat[estimator]) - self.spec.pi_Q1) ** 2

    def abs_errors(self, estimator: str) -> np.ndarray:
        return np.abs(np.asarray(self.pi_hat[estimator]) - self.spec.pi_Q1)

    def mean_excess_risk(self, method: str) -> float:
        return float(np.mean(self.excess_risk[method]))

    def summary(self) -> dict:
        def stats(v):
            v = np.asarray(v, dtype=float)
            se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
            return {"n": int(v.size), "mean": float(np.mean(v)) if v.size else float("nan"),
                    "se": se}

        return {
            "spec": asdict(self.spec),
            "replications": self.replications,
            "excess_risk": {m: stats(v) for m, v in self.excess_risk.items()},
            "pi_hat": {e: stats(v) for e, v in self.pi_hat.items()},
            "mse": {e: stats(self.squared_errors(e)) for e in self.pi_hat},
            "failures": self.failures,
        }

    def rows(self):
        """Long-format rows ``(replication, method, metric, value)`` in a fixed order."""
        for m in self.classifiers:
            for r, v in zip(self.rep_index.get(m, []), self.excess_risk.get(m, [])):
                yield r, m, "excess_risk", v
        for e in self.estimators:
            for r, v in zip(self.pi_rep_index.get(e, []), self.pi_hat.get(e, [])):
                yield r, e, "pi_hat", v
                yield r, e, "sq_error", (v - self.spec.pi_Q1) ** 2

    def write(self, csv_path, json_path=None, config: dict | None = None) -> None:
        write_csv(csv_path, ["replication", "method", "metric", "value"], self.rows())
        if json_path is not None:
            summary = self.summary()
            if config is not None:
                summary["config"] = config
            with open(json_path, "w") as fh:
                json.dump(summary, fh, indent=1, sort_keys=True, allow_nan=True)


def _fit_dnn(data: SimulatedData, settings: MethodSettings, seed: int):
    grid = [replace(c, seed=child_seed(seed, "dnn", i), batch_size=min(c.batch_size, data.source.n))
            for i, c in enumerate(settings.dnn_grid)]
    cfg = grid_search(data.source, grid, settings.valid_fraction, child_seed(seed, "dnn-split"))
    model = train_source(data.source, cfg, data.scaling)
    est = solve_pmle(ratio_weights(model, data.target.features))
    return PluginClassifier(model, est.pi_Q), est.pi_Q[0]


def run_replication(spec: ScenarioSpec, rep: int, classifiers: Sequence[str],
                    estimators: Sequence[str], settings: MethodSettings) -> dict:
    """One replication; returns per-method excess risks, priors and failures."""
    seed = child_seed(spec.master_seed, "replication", rep)
    data = generate(spec, seed)
    oracle = OracleClassifier(lambda x: true_eta(spec, "target", x))
    bayes = oracle.predict(data.test_raw)
    y = data.test.labels
    xt = data.test.features

    needed = set(classifiers) | {_ESTIMATOR_SOURCE[e] for e in estimators}
    risks, priors, failures = {}, {}, []
    bandwidth = settings.bandwidth
    for method in [m for m in CLASSIFIERS if m in needed]:
        try:
            if method == "bayes":
                pred, prior = bayes, None
            elif method == "dnn-pc":
                clf, prior = _fit_dnn(data, settings, seed)
                pred = clf.predict(xt)
            elif method == "saerens":
                kk = settings.neighbors or tune_neighbors(
                    data.source, valid_fraction=settings.valid_fraction,
                    seed=child_seed(seed, "knn-split"))
                clf = saerens_classifier(data.source, data.target, kk)
                pred, prior = clf.predict(xt), clf.prior[0]
            elif method in ("maity-pc", "maity-ic"):
                if bandwidth is None:
                    bandwidth = tune_bandwidth(data.source, valid_fraction=settings.valid_fraction,
                                               seed=child_seed(seed, "kde-split"))
                b = bandwidth
                if method == "maity-pc":
                    clf = maity_pc(data.source, data.target, b)
                else:
                    clf = maity_ic(data.source, Dataset(data.target.features, data.target_labels, 2), b)
                pred, prior = clf.predict(xt), clf.prior[0]
            else:
                raise ValueError(f"unknown method {method!r}")
        except Exception as exc:  # a failed fit is reported, not dropped
            logger.warning("replication %d, %s failed: %s", rep, method, exc)
            failures.append({"replication": rep, "method": method, "error": repr(exc)})
            continue
        risks[method] = excess_risk(pred, bayes, y)
        if prior is not None:
            priors[method] = float(prior)
    return {"rep": rep, "risks": risks, "priors": priors, "failures": failures}


def _run_one(args):
    return run_replication(*args)


def run_experiment(
    spec: ScenarioSpec,
    replications: int,
    classifiers: Iterable[str] = ("dnn-pc", "saerens", "maity-pc"),
    estimators: Iterable[str] | None = None,
    settings: MethodSettings | None = None,
    n_jobs: int = 1,
) -> ExperimentReport:
    """Repeat generate / fit / evaluate ``replications`` times.

    Each replication seeds itself from ``(master_seed, index)``, so the
    report is identical for any ``n_jobs``.  ``estimators`` defaults to the
    prior estimators of the requested classifiers.
    """
    if replications < 1:
        raise ValueError("need at least one replication")
    classifiers = tuple(classifiers)
    for m in classifiers:
        if m not in CLASSIFIERS:
            raise ValueError(f"unknown classifier {m!r}; valid: {', '.join(CLASSIFIERS)}")
    if estimators is None:
        estimators = tuple(e for e in ESTIMATORS if _ESTIMATOR_SOURCE[e] in classifiers)
    estimators = tuple(estimators)
    for e in estimators:
        if e not in ESTIMATORS:
            raise ValueError(f"unknown estimator {e!r}; valid: {', '.join(ESTIMATORS)}")
    settings = settings or MethodSettings()

    jobs = [(spec, r, classifiers, estimators, settings) for r in range(replications)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    report = ExperimentReport(spec, replications, classifiers, estimators)
    for m in classifiers:
        report.excess_risk[m], report.rep_index[m] = [], []
    for e in estimators:
        report.pi_hat[e], report.pi_rep_index[e] = [], []
    for res in results:
        for m in classifiers:
            if m in res["risks"]:
                report.excess_risk[m].append(res["risks"][m])
                report.rep_index[m].append(res["rep"])
        for e in estimators:
            src = _ESTIMATOR_SOURCE[e]
            if src in res["priors"]:
                report.pi_hat[e].append(res["priors"][src])
                report.pi_rep_index[e].append(res["rep"])
        report.failures.extend(res["failures"])
    return report
