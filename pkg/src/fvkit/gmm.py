"""Diagonal-covariance Gaussian mixtures and the GMM Fisher vector baseline."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import FisherVector, GmmModel, as_matrix
from .errors import DimensionError, NumericalError
from .pooling import NormalizationSpec, normalize

log = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)
COLLAPSE_WEIGHT = 1e-8


@dataclass
class EmLog:
    loglik: list = field(default_factory=list)
    reinitialized: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_iter(self) -> int:
        return len(self.loglik)


def variance_floor(X) -> float:
    X = as_matrix(X)
    v = float(X.var(axis=0).mean())
    return 1e-6 * v if v > 0 else 1e-12


def _logsumexp(a, axis=1):
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis, keepdims=True)) + amax
    return np.squeeze(out, axis=axis)


def _log_gaussian(X, means, variances):
    """(T, m) matrix of log N(x_i; mu_k, diag(var_k))."""
    # centring keeps the expanded quadratic form accurate for offset data
    shift = means.mean(axis=0)
    Xc = X - shift
    Mc = means - shift
    inv = 1.0 / variances
    quad = (Xc * Xc) @ inv.T - 2.0 * Xc @ (Mc * inv).T + np.sum(Mc * Mc * inv, axis=1)
    np.maximum(quad, 0.0, out=quad)
    return -0.5 * (quad + np.sum(np.log(variances), axis=1) + X.shape[1] * LOG_2PI)


def _joint_log(X, g: GmmModel):
    return _log_gaussian(X, g.means, g.variances) + np.log(g.weights)


def gmm_loglik(X, g: GmmModel) -> np.ndarray:
    """Per-feature log-likelihood under the mixture."""
    X = _checked(X, g)
    return _logsumexp(_joint_log(X, g))


def gmm_posteriors_batch(X, g: GmmModel) -> np.ndarray:
    X = _checked(X, g)
    lj = _joint_log(X, g)
    return np.exp(lj - _logsumexp(lj)[:, None])


def gmm_posteriors(x, g: GmmModel) -> np.ndarray:
    """Responsibilities P(k | x), computed in log space."""
    return gmm_posteriors_batch(np.asarray(x, dtype=np.float64).reshape(1, -1), g)[0]


def _checked(X, g):
    X = as_matrix(X)
    if X.shape[1] != g.d:
        raise DimensionError(f"feature dimension {X.shape[1]} does not match GMM dimension {g.d}")
    return X


def _sq_dists(X, C, x_sq=None):
    if x_sq is None:
        x_sq = np.einsum("ij,ij->i", X, X)
    d2 = x_sq[:, None] - 2.0 * X @ C.T + np.einsum("ij,ij->i", C, C)[None, :]
    return np.maximum(d2, 0.0)


def kmeans_pp(X, m, rng, n_iter=5):
    """k-means++ seeding followed by ``n_iter`` Lloyd iterations. Returns (centres, labels)."""
    T = X.shape[0]
    x_sq = np.einsum("ij,ij->i", X, X)
    centres = np.empty((m, X.shape[1]))
    centres[0] = X[rng.integers(T)]
    closest = _sq_dists(X, centres[:1], x_sq)[:, 0]
    for k in range(1, m):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(T))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, T - 1)
        centres[k] = X[idx]
        np.minimum(closest, _sq_dists(X, centres[k:k + 1], x_sq)[:, 0], out=closest)
    labels = np.argmin(_sq_dists(X, centres, x_sq), axis=1)
    for _ in range(n_iter):
        order = np.argsort(labels, kind="stable")
        counts = np.bincount(labels, minlength=m)
        filled = np.flatnonzero(counts)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])[filled]
        sums = np.add.reduceat(X[order], starts, axis=0)
        centres[filled] = sums / counts[filled, None]
        labels = np.argmin(_sq_dists(X, centres, x_sq), axis=1)
    return centres, labels


def _m_step(X, resp, floor):
    Nk = resp.sum(axis=0)
    safe = np.where(Nk > 0, Nk, 1.0)[:, None]
    centre = X.mean(axis=0)
    Xc = X - centre
    means_c = (resp.T @ Xc) / safe
    var = (resp.T @ (Xc * Xc)) / safe - means_c * means_c
    return Nk, means_c + centre, np.maximum(var, floor)


def gmm_fit_em(X, m: int, max_iter: int = 100, tol: float = 1e-6, seed: int = 0,
               kmeans_iter: int = 5, return_log=False):
    """Fit a diagonal GMM by EM.

    Stops when the mean log-likelihood improves by less than ``tol`` or after
    ``max_iter`` E-steps. A component whose weight drops below 1e-8 is moved
    onto the worst-explained feature; such events are logged and recorded.
    """
    X = as_matrix(X)
    T, d = X.shape
    if m < 1:
        raise ValueError("m must be >= 1")
    if T < m:
        raise ValueError(f"need at least as many features ({T}) as components ({m})")
    rng = np.random.default_rng(seed)
    floor = variance_floor(X)
    global_var = np.maximum(X.var(axis=0), floor)

    centres, labels = kmeans_pp(X, m, rng, kmeans_iter)
    resp = np.zeros((T, m))
    resp[np.arange(T), labels] = 1.0
    Nk, means, var = _m_step(X, resp, floor)
    small = Nk < 2
    means[Nk == 0] = centres[Nk == 0]
    var[small] = global_var
    weights = np.maximum(Nk, 1.0) / np.maximum(Nk, 1.0).sum()

    info = EmLog()
    prev = -np.inf
    for it in range(max_iter):
        lj = _log_gaussian(X, means, var) + np.log(weights)
        ll = _logsumexp(lj)
        mean_ll = float(ll.mean())
        if not math.isfinite(mean_ll):
            raise NumericalError(f"non-finite log-likelihood at EM iteration {it}")
        info.loglik.append(mean_ll)
        if it > 0 and mean_ll - prev < tol:
            info.converged = True
            break
        prev = mean_ll
        resp = np.exp(lj - ll[:, None])
        Nk, means, var = _m_step(X, resp, floor)
        weights = Nk / T
        collapsed = np.flatnonzero(weights < COLLAPSE_WEIGHT)
        if collapsed.size:
            worst = np.argsort(ll, kind="stable")
            for k, row in zip(collapsed, worst):
                means[k] = X[row]
                var[k] = global_var
                weights[k] = 1.0 / T
                info.reinitialized.append((it, int(k)))
                log.warning("EM iteration %d: component %d collapsed and was reinitialised", it, k)
            weights = weights / weights.sum()
            prev = -np.inf
    else:
        lj = _log_gaussian(X, means, var) + np.log(weights)
        info.loglik.append(float(_logsumexp(lj).mean()))
    weights = weights / weights.sum()
    g = GmmModel(weights, means, var)
    return (g, info) if return_log else g


def gmm_mean_gradient(X, g: GmmModel) -> np.ndarray:
    """d/d mu_k of sum_i log p(x_i): sum_i gamma_ik (x_i - mu_k) / var_k, shape (m, d)."""
    X = _checked(X, g)
    resp = gmm_posteriors_batch(X, g)
    out = np.empty((g.m, g.d))
    for k in range(g.m):
        out[k] = resp[:, k] @ (X - g.means[k]) / g.variances[k]
    return out


def gmmfv_pooled(X, g: GmmModel, include_variance=True) -> np.ndarray:
    """Sum-pooled Fisher vector before normalisation.

    Mean block per component: (1/sqrt(w_k)) sum_i gamma_ik (x_i - mu_k)/sigma_k.
    Variance block: (1/sqrt(2 w_k)) sum_i gamma_ik [((x_i - mu_k)/sigma_k)^2 - 1].
    """
    X = _checked(X, g)
    resp = gmm_posteriors_batch(X, g)
    sigma = np.sqrt(g.variances)
    mean_block = np.empty((g.m, g.d))
    var_block = np.empty((g.m, g.d)) if include_variance else None
    for k in range(g.m):
        Z = (X - g.means[k]) / sigma[k]
        r = resp[:, k]
        mean_block[k] = (r @ Z) / math.sqrt(g.weights[k])
        if include_variance:
            var_block[k] = (r @ (Z * Z - 1.0)) / math.sqrt(2.0 * g.weights[k])
    if include_variance:
        return np.concatenate([mean_block.ravel(), var_block.ravel()])
    return mean_block.ravel()


def gmmfv_encode(X, g: GmmModel, norm: NormalizationSpec | None = None,
                 include_variance=True) -> FisherVector:
    v = gmmfv_pooled(X, g, include_variance)
    v = normalize(v, norm or NormalizationSpec(subvector_len=g.d))
    layout = "gmmfvc" if include_variance else "gmmfvc-mean"
    return FisherVector(v, layout, d=g.d, n_sub=g.m)
