"""Source posterior estimator: a dense ReLU network with reference-class softmax.

The network emits ``k - 1`` logits ``phi_1..phi_{k-1}``; the last class is the
reference with ``phi_k = 0``, so

    eta_l(x) = exp(phi_l(x)) / (1 + sum_i exp(phi_i(x))).

Training minimises the mean negative multinomial log-likelihood with Adam.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from gcshift.data import Dataset, ScalingSpec, class_proportions, split
from gcshift.seeding import make_rng

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class MlpConfig:
    """Architecture and optimiser settings.

    ``depth`` counts hidden layers, all of width ``width``.  ``output_dim``
    is ``k - 1``.  Logits are clipped to ``[-output_clip, output_clip]``.
    """

    depth: int = 2
    width: int = 16
    output_dim: int = 1
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    output_clip: float = 10.0

    def __post_init__(self):
        if self.depth < 1 or self.width < 1 or self.output_dim < 1:
            raise ValueError(f"depth, width and output_dim must be positive: {self}")
        if not self.output_clip > 0:
            raise ValueError("output_clip must be positive")
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid optimiser settings: {self}")

    @property
    def k(self) -> int:
        return self.output_dim + 1


@dataclass
class MlpParams:
    """Weights ``W_0..W_K`` and hidden biases ``mu_0..mu_{K-1}``.

    ``W_0`` is ``width x d``, hidden ``W_i`` are ``width x width`` and
    ``W_K`` is ``(k-1) x width``.  The output layer has no bias.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) + 1 or not self.biases:
            raise ValueError("need K+1 weight matrices and K bias vectors, K >= 1")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ValueError(f"bias {i} has shape {b.shape}, expected ({w.shape[0]},)")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"weight {i} does not chain with weight {i - 1}")

    @property
    def d(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, theta: np.ndarray) -> "MlpParams":
        out, pos = [], 0
        for a in self.arrays():
            out.append(np.asarray(theta[pos:pos + a.size], dtype=float).reshape(a.shape))
            pos += a.size
        nw = len(self.weights)
        return MlpParams(out[:nw], out[nw:])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        weights = [np.atleast_2d(np.asarray(w, dtype=float)) for w in d["weights"]]
        biases = [np.asarray(b, dtype=float).ravel() for b in d["biases"]]
        return cls(weights, biases)


def init_params(d: int, config: MlpConfig, rng: np.random.Generator) -> MlpParams:
    """Uniform(+-sqrt(6 / fan_in)) weights and zero biases."""
    sizes = [d] + [config.width] * config.depth + [config.output_dim]
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
    biases = [np.zeros(config.width) for _ in range(config.depth)]
    return MlpParams(weights, biases)


def _forward(params: MlpParams, x: np.ndarray):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != params.d:
        raise ValueError(f"input has dimension {x.shape[1]}, network expects {params.d}")
    acts, pre = [x], []
    h = x
    # overflow surfaces as a non-finite output, checked by the callers
    with np.errstate(over="ignore", invalid="ignore"):
        for w, b in zip(params.weights[:-1], params.biases):
            z = h @ w.T + b
            pre.append(z)
            h = np.maximum(z, 0.0)
            acts.append(h)
        out = h @ params.weights[-1].T
    return acts, pre, out


def forward_phi(params: MlpParams, x: np.ndarray, clip: float = np.inf) -> np.ndarray:
    """Logits ``phi(x)`` for each row of ``x``, clipped to ``[-clip, clip]``.

    Returns an ``n x (k-1)`` array (``(k-1,)`` for a single vector input).
    """
    single = np.ndim(x) == 1
    _, _, raw = _forward(params, x)
    if not np.all(np.isfinite(raw)):
        raise FloatingPointError("non-finite network output")
    phi = np.clip(raw, -clip, clip)
    return phi[0] if single else phi


def softmax_ref(phi: np.ndarray) -> np.ndarray:
    """Map ``k-1`` logits (reference class last, logit 0) to ``k`` probabilities."""
    phi = np.asarray(phi, dtype=float)
    single = phi.ndim == 1
    phi = np.atleast_2d(phi)
    if not np.all(np.isfinite(phi)):
        raise FloatingPointError("non-finite logits")
    full = np.concatenate([phi, np.zeros((phi.shape[0], 1))], axis=1)
    full -= full.max(axis=1, keepdims=True)
    e = np.exp(full)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if single else p


def _log_partition(phi: np.ndarray) -> np.ndarray:
    full = np.concatenate([phi, np.zeros((phi.shape[0], 1))], axis=1)
    m = full.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(full - m).sum(axis=1, keepdims=True)))[:, 0]


def _check_labels(y, k: int) -> np.ndarray:
    if y is None:
        raise ValueError("the likelihood needs labels")
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 1) or np.any(y > k):
        raise ValueError(f"labels must lie in 1..{k}")
    return y


def nll_loss(params: MlpParams, x: np.ndarray, y: np.ndarray, clip: float = np.inf) -> float:
    """Mean negative log-likelihood of labels ``y`` (1-based) under the network."""
    y = _check_labels(y, params.output_dim + 1)
    phi = forward_phi(params, x, clip)
    phi = np.atleast_2d(phi)
    full = np.concatenate([phi, np.zeros((phi.shape[0], 1))], axis=1)
    picked = full[np.arange(len(y)), y - 1]
    return float(np.mean(_log_partition(phi) - picked))


def gradient(params: MlpParams, x: np.ndarray, y: np.ndarray, clip: float = np.inf) -> MlpParams:
    """Backpropagated gradient of :func:`nll_loss`.

    The ReLU derivative at 0 is taken as 0; a clipped logit passes no gradient.
    """
    k = params.output_dim + 1
    y = _check_labels(y, k)
    acts, pre, raw = _forward(params, x)
    if not all(np.all(np.isfinite(a)) for a in (*acts, raw)):
        raise FloatingPointError("non-finite activations")
    n = raw.shape[0]
    phi = np.clip(raw, -clip, clip)
    eta = softmax_ref(phi)
    onehot = np.zeros_like(eta)
    onehot[np.arange(n), y - 1] = 1.0
    delta = (eta - onehot)[:, :-1] / n
    delta = delta * (np.abs(raw) < clip)

    nh = len(params.biases)
    gw: list[np.ndarray] = [None] * (nh + 1)
    gb: list[np.ndarray] = [None] * nh
    gw[nh] = delta.T @ acts[nh]
    back = delta @ params.weights[nh]
    for i in range(nh - 1, -1, -1):
        back = back * (pre[i] > 0)
        gw[i] = back.T @ acts[i]
        gb[i] = back.sum(axis=0)
        if i:
            back = back @ params.weights[i]
    return MlpParams(gw, gb)


@dataclass(frozen=True)
class SourceModel:
    """Trained network plus the source class proportions and feature scaling."""

    params: MlpParams
    config: MlpConfig
    pi_P: np.ndarray
    scaling: ScalingSpec | None = None
    feature_names: tuple[str, ...] | None = None

    @property
    def k(self) -> int:
        return self.config.k

    def transform(self, x: np.ndarray) -> np.ndarray:
        """Raw features to network coordinates (identity without a scaling)."""
        return x if self.scaling is None else self.scaling.transform(x)

    def phi(self, x: np.ndarray) -> np.ndarray:
        return forward_phi(self.params, x, self.config.output_clip)

    def eta(self, x: np.ndarray) -> np.ndarray:
        """Estimated source posteriors for scaled features (rows sum to 1)."""
        return softmax_ref(self.phi(x))

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            **self.params.to_dict(),
            "pi_P": np.asarray(self.pi_P).tolist(),
            "scaling": None if self.scaling is None else self.scaling.to_dict(),
            "feature_names": None if self.feature_names is None else list(self.feature_names),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "SourceModel":
        scaling = d.get("scaling")
        names = d.get("feature_names")
        return cls(
            params=MlpParams.from_dict(d),
            config=MlpConfig(**d["config"]),
            pi_P=np.asarray(d["pi_P"], dtype=float),
            scaling=None if scaling is None else ScalingSpec.from_dict(scaling),
            feature_names=None if names is None else tuple(names),
        )

    @classmethod
    def from_json(cls, path) -> "SourceModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def eta_p(model: SourceModel, x: np.ndarray) -> np.ndarray:
    return model.eta(x)


class _Adam:
    def __init__(self, theta: np.ndarray, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros_like(theta)
        self.v = np.zeros_like(theta)
        self.t = 0

    def step(self, theta: np.ndarray, g: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_source(
    data: Dataset,
    config: MlpConfig,
    scaling: ScalingSpec | None = None,
) -> SourceModel:
    """Fit the network by mini-batch Adam on the labeled source sample.

    Returns the epoch-end snapshot (including the initialisation) with the
    lowest full-data loss.
    """
    if data.labels is None:
        raise ValueError("source data must be labeled")
    if config.output_dim != data.k - 1:
        raise ValueError(f"config.output_dim={config.output_dim} but data has k={data.k}")
    if data.n < config.batch_size:
        raise ValueError(f"n_P={data.n} is smaller than batch size {config.batch_size}")
    x, y = data.features, data.labels
    rng = make_rng(config.seed, "mlp")
    params = init_params(data.d, config, rng)
    clip = config.output_clip

    best = params.copy()
    best_loss = nll_loss(params, x, y, clip)
    theta = params.flatten()
    opt = _Adam(theta, config.learning_rate)
    for epoch in range(config.epochs):
        perm = rng.permutation(data.n)
        for start in range(0, data.n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            try:
                g = gradient(params, x[idx], y[idx], clip).flatten()
            except FloatingPointError as exc:
                raise TrainingError(f"training diverged at epoch {epoch + 1}: {exc}") from exc
            theta = opt.step(theta, g)
            params = params.unflatten(theta)
        try:
            loss = nll_loss(params, x, y, clip)
        except FloatingPointError:
            loss = np.nan
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite training loss at epoch {epoch + 1}")
        if loss < best_loss:
            best, best_loss = params.copy(), loss
    logger.debug("trained %s: best full-data nll %.6f", config, best_loss)
    return SourceModel(best, config, class_proportions(data), scaling, data.columns)


def default_grid(k: int = 2, seed: int = 0, epochs: int = 100, batch_size: int = 32) -> list[MlpConfig]:
    """Depth {1,2,3} x width {8,16,32,64} x learning rate {1e-3,1e-2}."""
    return [
        MlpConfig(depth=depth, width=width, output_dim=k - 1, learning_rate=lr,
                  batch_size=batch_size, epochs=epochs, seed=seed)
        for depth in (1, 2, 3) for width in (8, 16, 32, 64) for lr in (1e-3, 1e-2)
    ]


def grid_search(
    data: Dataset,
    grid: Sequence[MlpConfig],
    valid_fraction: float = 0.3,
    seed: int = 0,
) -> MlpConfig:
    """Pick the config with the lowest held-out loss; ties go to the earlier entry."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if len(grid) == 1:
        return grid[0]
    train, valid = split(data, 1.0 - valid_fraction, seed)
    best_cfg, best_loss = None, np.inf
    for cfg in grid:
        batch = min(cfg.batch_size, train.n)
        model = train_source(train, replace(cfg, batch_size=batch))
        loss = nll_loss(model.params, valid.features, valid.labels, cfg.output_clip)
        logger.debug("grid %s -> validation nll %.6f", cfg, loss)
        if loss < best_loss:
            best_cfg, best_loss = cfg, loss
    return best_cfg if best_cfg is not None else grid[0]
