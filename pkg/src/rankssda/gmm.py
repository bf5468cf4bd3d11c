"""One-dimensional Gaussian mixture fitted by EM.

Used to turn unlabeled rank scores into soft class assignments: after
sorting the components by mean, component k stands for class k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

VAR_FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class Gmm1d:
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    log_likelihood: float
    # mean log-likelihood after each EM iteration
    history: tuple[float, ...] = field(default=(), compare=False)

    def __eq__(self, other):
        if not isinstance(other, Gmm1d):
            return NotImplemented
        return (np.array_equal(self.means, other.means)
                and np.array_equal(self.variances, other.variances)
                and np.array_equal(self.weights, other.weights)
                and self.log_likelihood == other.log_likelihood)

    @property
    def num_components(self) -> int:
        return len(self.means)

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "weights": self.weights.tolist(),
            "log_likelihood": self.log_likelihood,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Gmm1d":
        return cls(np.array(d["means"], float), np.array(d["variances"], float),
                   np.array(d["weights"], float), float(d["log_likelihood"]))


def _log_joint(x, means, variances, weights):
    # (n, C) matrix of log(weight_k * N(x_n; mean_k, var_k))
    d = x[:, None] - means[None, :]
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return log_w - 0.5 * (LOG_2PI + np.log(variances) + d * d / variances)


def _logsumexp_rows(a):
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def fit_gmm(scores, C: int, max_iters: int = 200, tol: float = 1e-8, seed: int = 0,
            var_floor: float = VAR_FLOOR) -> Gmm1d:
    """Fit a C-component mixture to ``scores`` with EM.

    Means start at the (k - 0.5)/C empirical quantiles, weights are equal
    and every variance starts at the global variance.  Iteration stops once
    the mean log-likelihood improves by less than ``tol``.  The result is
    returned with components sorted by mean.
    """
    x = np.asarray(scores, dtype=np.float64).reshape(-1)
    if C < 1:
        raise InputError(f"need at least one component, got {C}")
    if x.size < C:
        raise InputError(f"need at least {C} scores, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("scores must be finite")

    means = np.quantile(x, (np.arange(C) + 0.5) / C)
    if C > 1 and np.any(np.diff(means) <= 0):
        # tied quantiles: separate the starting points slightly
        rng = np.random.default_rng(seed)
        scale = 1e-3 * (x.std() if x.std() > 0 else 1.0)
        means = means + np.sort(rng.uniform(-scale, scale, size=C))
    variances = np.full(C, max(x.var(), var_floor))
    weights = np.full(C, 1.0 / C)

    history = []
    log_joint = _log_joint(x, means, variances, weights)
    log_norm = _logsumexp_rows(log_joint)
    prev = float(log_norm.mean())
    for _ in range(max_iters):
        resp = np.exp(log_joint - log_norm[:, None])
        nk = resp.sum(axis=0)
        live = nk > 0
        weights = nk / x.size
        means = np.where(live, (resp * x[:, None]).sum(axis=0) / np.where(live, nk, 1.0), means)
        d = x[:, None] - means[None, :]
        variances = np.where(live, (resp * d * d).sum(axis=0) / np.where(live, nk, 1.0), variances)
        variances = np.maximum(variances, var_floor)

        log_joint = _log_joint(x, means, variances, weights)
        log_norm = _logsumexp_rows(log_joint)
        current = float(log_norm.mean())
        history.append(current)
        if current - prev < tol:
            break
        prev = current

    gmm = Gmm1d(means, variances, weights, float(log_norm.sum()), tuple(history))
    return order_components(gmm)


def order_components(gmm: Gmm1d) -> Gmm1d:
    """Permute components so that means ascend (stable on ties)."""
    order = np.argsort(gmm.means, kind="stable")
    return Gmm1d(gmm.means[order], gmm.variances[order], gmm.weights[order],
                 gmm.log_likelihood, gmm.history)


def responsibilities(gmm: Gmm1d, score) -> np.ndarray:
    """Posterior component probabilities for one score or an array of scores.

    A scalar score gives a (C,) vector; an array of n scores gives (n, C).
    """
    x = np.asarray(score, dtype=np.float64)
    log_joint = _log_joint(x.reshape(-1), gmm.means, gmm.variances, gmm.weights)
    resp = np.exp(log_joint - _logsumexp_rows(log_joint)[:, None])
    return resp[0] if x.ndim == 0 else resp
