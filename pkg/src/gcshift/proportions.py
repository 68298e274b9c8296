"""Target class proportions from unlabeled target features.

Under general conditional shift the target feature density is a k-component
mixture whose component ratios ``f_l / f_k`` equal the source ratios
``exp(alpha_l + phi_l(x))`` with ``alpha_l = log(pi_P,k / pi_P,l)``.  Plugging
the fitted source model into that mixture gives a concave pseudo-likelihood
in ``pi_Q``:

    L(pi) = sum_j log( sum_l pi_l r_jl ),   r_jk = 1.

:func:`solve_pmle` maximises it over the simplex; :func:`em_saerens` is the
classic prior-adjustment EM that works from posteriors instead of ratios.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from gcshift.data import check_simplex

TOL = 1e-10
MAX_ITER = 10_000


class EmptySourceClassError(ValueError):
    """A source class has zero estimated proportion, so its ratio is undefined."""


@dataclass(frozen=True)
class RatioWeights:
    """Per-row component ratios ``r[j, l] = f_l(x_j) / f_k(x_j)``; last column is 1."""

    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 2 or r.shape[1] < 2 or r.shape[0] < 1:
            raise ValueError(f"ratio weights must be n x k with k >= 2, got {r.shape}")
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            raise ValueError("ratio weights must be strictly positive and finite")
        if not np.all(r[:, -1] == 1.0):
            raise ValueError("the reference column of the ratio weights must be 1")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def k(self) -> int:
        return self.r.shape[1]

    @classmethod
    def from_ratios(cls, ratios: np.ndarray) -> "RatioWeights":
        """Build from the ``k-1`` non-reference ratio columns."""
        ratios = np.asarray(ratios, dtype=float)
        if ratios.ndim == 1:
            ratios = ratios[:, None]
        return cls(np.column_stack([ratios, np.ones(ratios.shape[0])]))


@dataclass(frozen=True)
class TargetProportionEstimate:
    pi_Q: np.ndarray
    iterations: int
    final_pseudo_loglik: float
    converged: bool
    solver: str
    degenerate: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pi_Q"] = np.asarray(self.pi_Q).tolist()
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "TargetProportionEstimate":
        d = dict(d)
        d["pi_Q"] = np.asarray(d["pi_Q"], dtype=float)
        return cls(**d)


def _alpha(pi_P: np.ndarray) -> np.ndarray:
    pi_P = check_simplex(pi_P)
    if np.any(pi_P <= 0):
        raise EmptySourceClassError(f"empty source class in pi_P={pi_P}")
    return np.log(pi_P[-1] / pi_P[:-1])


def ratio_weights(model, x: np.ndarray) -> RatioWeights:
    """``r[j, l] = exp(alpha_l + phi_l(x_j))`` from a model exposing ``phi`` and ``pi_P``."""
    alpha = _alpha(model.pi_P)
    phi = np.atleast_2d(model.phi(x))
    return RatioWeights.from_ratios(np.exp(alpha + phi))


def ratio_weights_from_eta(eta: np.ndarray, pi_P: np.ndarray) -> RatioWeights:
    """The same weights via posteriors: ``(eta_l / pi_P,l) * (pi_P,k / eta_k)``."""
    pi_P = check_simplex(pi_P)
    if np.any(pi_P <= 0):
        raise EmptySourceClassError(f"empty source class in pi_P={pi_P}")
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    scaled = eta / pi_P
    return RatioWeights.from_ratios(scaled[:, :-1] / scaled[:, -1:])


def pseudo_log_likelihood(r: RatioWeights, pi_Q) -> float:
    pi_Q = check_simplex(pi_Q)
    mix = r.r @ pi_Q
    if np.any(mix <= 0):
        raise FloatingPointError("non-positive mixture value; ratio weights are corrupt")
    return float(np.sum(np.log(mix)))


def _is_flat(r: np.ndarray) -> bool:
    return bool(np.all(np.abs(r - 1.0) <= 1e-12))


def _uniform(k: int) -> np.ndarray:
    return np.full(k, 1.0 / k)


def solve_pmle(r: RatioWeights, tol: float = TOL, max_iter: int = MAX_ITER) -> TargetProportionEstimate:
    """Maximise the pseudo-likelihood over the probability simplex.

    Binary problems bisect the monotone score on ``[0, 1]`` and return an
    endpoint when the score does not change sign.  Multi-class problems run
    the multiplicative fixed point from the uniform vector.  A flat
    likelihood (every ratio 1) returns the uniform vector flagged degenerate.
    """
    k = r.k
    if _is_flat(r.r):
        u = _uniform(k)
        return TargetProportionEstimate(u, 0, pseudo_log_likelihood(r, u), False,
                                        "bisection-score" if k == 2 else "em-fixed-point", True)
    if k == 2:
        return _bisect_binary(r, tol)
    est = _fixed_point(r, _uniform(k), tol, max_iter)
    pi, ll = _polish(r.r, est.pi_Q)
    if ll > est.final_pseudo_loglik:
        est = replace(est, pi_Q=pi, final_pseudo_loglik=ll)
    return est


def _bisect_binary(r: RatioWeights, tol: float) -> TargetProportionEstimate:
    r1 = r.r[:, 0]
    a = r1 - 1.0

    def score(p):
        with np.errstate(over="ignore"):
            return float(np.sum(a / (p * r1 + (1.0 - p))))

    def done(p, it, ok=True):
        pi = np.array([p, 1.0 - p])
        return TargetProportionEstimate(pi, it, pseudo_log_likelihood(r, pi), ok, "bisection-score")

    if score(0.0) <= 0.0:
        return done(0.0, 0)
    if score(1.0) >= 0.0:
        return done(1.0, 0)
    lo, hi, it = 0.0, 1.0, 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if score(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        it += 1
    return done(0.5 * (lo + hi), it)


def _fixed_point(r: RatioWeights, pi: np.ndarray, tol: float, max_iter: int,
                 trace: list | None = None) -> TargetProportionEstimate:
    rr = r.r
    converged = False
    it = 0
    if trace is not None:
        trace.append(pseudo_log_likelihood(r, pi))
    while it < max_iter:
        w = rr * pi
        new = (w / w.sum(axis=1, keepdims=True)).mean(axis=0)
        new /= new.sum()
        it += 1
        change = np.max(np.abs(new - pi))
        pi = new
        if trace is not None:
            trace.append(pseudo_log_likelihood(r, pi))
        if change < tol:
            converged = True
            break
    return TargetProportionEstimate(pi, it, pseudo_log_likelihood(r, pi), converged, "em-fixed-point")


def _loglik(rr: np.ndarray, pi: np.ndarray) -> float:
    mix = rr @ pi
    return float(np.sum(np.log(mix))) if np.all(mix > 0) else -np.inf


def _polish(rr: np.ndarray, pi: np.ndarray, max_steps: int = 100) -> tuple[np.ndarray, float]:
    """Active-set Newton ascent on the face spanned by the support of ``pi``.

    The fixed point converges linearly, and slowly when a coordinate heads
    to 0 or the information matrix is ill-conditioned.  Newton steps on the
    current face finish the job; a coordinate that a step would push below 0
    is pinned at 0, and an excluded coordinate re-enters when its gradient
    exceeds ``n``.
    """
    n, k = rr.shape
    pi = pi.copy()
    ll = _loglik(rr, pi)
    for _ in range(max_steps):
        m = rr @ pi
        g = (rr / m[:, None]).sum(axis=0)
        free = pi > 0
        enter = ~free & (g > n * (1.0 + 1e-12))
        if enter.any():
            free |= enter
        idx = np.flatnonzero(free)
        if len(idx) < 2:
            break
        q = rr[:, idx] / m[:, None]
        hess = q.T @ q
        f = len(idx)
        kkt = np.zeros((f + 1, f + 1))
        kkt[:f, :f] = hess
        kkt[:f, f] = kkt[f, :f] = 1.0
        try:
            sol = np.linalg.solve(kkt, np.concatenate([g[idx] - n, [0.0]]))
        except np.linalg.LinAlgError:
            break
        step = np.zeros(k)
        # hess is the negated Hessian, so sol[:f] is the ascent direction
        step[idx] = sol[:f]
        if np.max(np.abs(step)) < 1e-16:
            break
        neg = step < 0
        with np.errstate(divide="ignore"):
            room = np.where(neg, pi / np.where(neg, -step, 1.0), np.inf)
        a = a_max = min(1.0, float(room.min()))
        while a > a_max * 1e-12:
            cand = np.maximum(pi + a * step, 0.0)
            cand[neg & (room <= a)] = 0.0
            cand /= cand.sum()
            cll = _loglik(rr, cand)
            # rounding slack so that pinning a negligible coordinate is accepted
            if cll >= ll - 1e-14 * max(1.0, abs(ll)):
                break
            a *= 0.5
        else:
            break
        improved = cll - ll
        pinned = bool(np.any((cand == 0) & (pi > 0)))
        pi, ll = cand, cll
        if improved <= 1e-15 * max(1.0, abs(ll)) and not (pinned or enter.any()):
            break
    return pi, ll


def em_saerens(model, x: np.ndarray, tol: float = TOL, max_iter: int = MAX_ITER,
               trace: list | None = None) -> TargetProportionEstimate:
    """Prior-adjustment EM on the posteriors of ``model`` at target rows ``x``.

    ``model`` needs ``eta(x)`` (n x k posteriors) and ``pi_P``.
    """
    return em_from_posteriors(model.eta(x), model.pi_P, tol, max_iter, trace)


def em_from_posteriors(eta: np.ndarray, pi_P, tol: float = TOL, max_iter: int = MAX_ITER,
                       trace: list | None = None) -> TargetProportionEstimate:
    """EM started at ``pi_P``: reweight posteriors by ``pi / pi_P``, then average.

    The reported log-likelihood is ``sum_j log sum_l pi_l eta_jl / pi_P,l``,
    which differs from :func:`pseudo_log_likelihood` by a constant in ``pi``.
    """
    pi_P = check_simplex(pi_P)
    if np.any(pi_P <= 0):
        raise EmptySourceClassError(f"empty source class in pi_P={pi_P}")
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    q = eta / pi_P
    # Rows with a common value across classes carry no information about pi.
    degenerate = bool(np.all(np.ptp(q, axis=1) <= 1e-12 * np.max(q, axis=1)))

    def loglik(pi):
        mix = q @ pi
        if np.any(mix <= 0):
            raise FloatingPointError("non-positive mixture value in EM")
        return float(np.sum(np.log(mix)))

    pi = pi_P.copy()
    if trace is not None:
        trace.append(loglik(pi))
    converged, it = False, 0
    while it < max_iter:
        w = q * pi
        new = (w / w.sum(axis=1, keepdims=True)).mean(axis=0)
        new /= new.sum()
        it += 1
        change = np.max(np.abs(new - pi))
        pi = new
        if trace is not None:
            trace.append(loglik(pi))
        if change < tol:
            converged = True
            break
    return TargetProportionEstimate(pi, it, loglik(pi), converged and not degenerate,
                                    "em-fixed-point", degenerate)
