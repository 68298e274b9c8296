"""Shared test utilities: finite differences and random problem instances."""

import functools

import numpy as np

from gcshift.network import MlpConfig, MlpParams, _forward, init_params, nll_loss
from gcshift.proportions import RatioWeights

FD_STEP = 1e-5
# denominators below this are treated as absolute error
REL_FLOOR = 1e-6
KINK_MARGIN = 1e-3


def central_differences(params: MlpParams, x, y, step=FD_STEP, clip=np.inf) -> np.ndarray:
    theta = params.flatten()
    out = np.empty_like(theta)
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += step
        dn[i] -= step
        out[i] = (nll_loss(params.unflatten(up), x, y, clip)
                  - nll_loss(params.unflatten(dn), x, y, clip)) / (2 * step)
    return out


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def random_network(rng, max_d=5, max_depth=3, max_width=8, max_k=4, n=12):
    """A small random network and data whose ReLU inputs keep clear of 0."""
    while True:
        d = int(rng.integers(1, max_d + 1))
        k = int(rng.integers(2, max_k + 1))
        cfg = MlpConfig(depth=int(rng.integers(1, max_depth + 1)),
                        width=int(rng.integers(1, max_width + 1)), output_dim=k - 1)
        params = init_params(d, cfg, rng)
        params = MlpParams(params.weights, [rng.normal(0, 0.5, b.shape) for b in params.biases])
        x = rng.random((n, d))
        y = rng.integers(1, k + 1, n)
        _, pre, _ = _forward(params, x)
        if all(np.min(np.abs(z)) > KINK_MARGIN for z in pre):
            return params, x, y


def random_ratio_instance(rng, max_k=4, max_n=200):
    """Ratio weights generated from a k-component mixture with random proportions."""
    k = int(rng.integers(2, max_k + 1))
    n = int(rng.integers(20, max_n + 1))
    pi = rng.dirichlet(np.full(k, 2.0))
    comp = rng.choice(k, size=n, p=pi)
    centers = rng.normal(0.0, 1.0, (k, k - 1))
    log_r = centers[comp] + rng.normal(0.0, 0.7, (n, k - 1))
    return RatioWeights.from_ratios(np.exp(log_r))


def _compositions(k: int, m: int) -> np.ndarray:
    if k == 1:
        return np.array([[m]])
    return np.vstack([np.column_stack([np.full(len(t), head), t])
                      for head in range(m + 1) for t in [_compositions(k - 1, m - head)]])


@functools.lru_cache(maxsize=None)
def simplex_grid(k: int, resolution: float = 0.01) -> np.ndarray:
    m = int(round(1 / resolution))
    return _compositions(k, m) / m


def grid_maximum(r: RatioWeights, resolution: float = 0.01) -> float:
    g = simplex_grid(r.k, resolution)
    best = -np.inf
    for s in range(0, len(g), 20000):
        with np.errstate(divide="ignore"):
            ll = np.log(r.r @ g[s:s + 20000].T).sum(axis=0)
        best = max(best, float(ll.max()))
    return best
