"""Lasso inference and dictionary learning.

Every solver here minimises, per feature x,

    F(u) = (1/sigma2) * ||x - B u||^2 + lam * ||u||_1

and certifies its answer with the KKT residual: for u_k != 0 the value
|(2/sigma2) b_k'(Bu - x) + lam sign(u_k)|, for u_k == 0 the excess
max(0, |(2/sigma2) b_k'(Bu - x)| - lam).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Dictionary, as_basis, as_matrix
from .errors import ConvergenceError, DimensionError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseCodingParams:
    lam: float
    sigma2: float = 1.0
    max_iter: int = 1000
    tol: float = 1e-6

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be a finite value >= 0, got {self.lam}")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.tol <= 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")

    @property
    def grad_scale(self) -> float:
        return 2.0 / self.sigma2

    @property
    def threshold(self) -> float:
        """Soft threshold of the equivalent problem 0.5||x - Bu||^2 + t||u||_1."""
        return self.lam * self.sigma2 / 2.0


def default_lambda(X) -> float:
    """Scale-aware default: 0.15 * mean feature norm / sqrt(d)."""
    X = as_matrix(X)
    return 0.15 * float(np.linalg.norm(X, axis=1).mean()) / math.sqrt(X.shape[1])


@dataclass(frozen=True, eq=False)
class SparseCode:
    u: np.ndarray
    kkt_residual: float = 0.0
    n_iter: int = 0
    converged: bool = True
    rank_deficient: bool = False

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.u))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.u)


@dataclass
class CodingStats:
    n_iter: np.ndarray
    kkt: np.ndarray
    n_nonconverged: int = 0


@dataclass
class DictLearnLog:
    objective: list = field(default_factory=list)
    dead_atoms_reset: int = 0
    n_nonconverged: int = 0


def _gram(B):
    G = B.T @ B
    return 0.5 * (G + G.T)


def _check_dims(X, B):
    if X.shape[1] != B.shape[0]:
        raise DimensionError(f"feature dimension {X.shape[1]} does not match dictionary rows {B.shape[0]}")


def lasso_objective(X, B, U, p: SparseCodingParams):
    """Per-row objective values for codes U (rows) of features X (rows)."""
    X, B = as_matrix(X), as_basis(B)
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    R = X - U @ B.T
    return np.einsum("ij,ij->i", R, R) / p.sigma2 + p.lam * np.abs(U).sum(axis=1)


def kkt_residual(x, B, u, p: SparseCodingParams) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    B = as_basis(B)
    u = np.asarray(u, dtype=np.float64).ravel()
    g = p.grad_scale * (B.T @ (B @ u - x))
    return _kkt_from_grad(g, u, p.lam)


def _kkt_from_grad(g, u, lam):
    v = np.where(u > 0, np.abs(g + lam), np.where(u < 0, np.abs(g - lam), np.abs(g) - lam))
    return float(max(v.max(initial=0.0), 0.0))


def solve_codes(X, B, p: SparseCodingParams, U0=None, on_fail="raise", backend=None):
    """Batched coordinate-descent lasso; returns the (T, K) code matrix and stats.

    ``on_fail`` decides what happens to rows that hit ``max_iter``: ``"raise"``
    raises ConvergenceError for the first one, ``"warn"`` keeps the last
    iterate and logs a warning, ``"ignore"`` keeps it silently.
    """
    X, B = as_matrix(X), as_basis(B)
    _check_dims(X, B)
    kern = _kernels.get_backend(backend)
    T, K = X.shape[0], B.shape[1]
    U = np.zeros((T, K)) if U0 is None else np.array(U0, dtype=np.float64, order="C", copy=True)
    if U.shape != (T, K):
        raise DimensionError(f"warm start has shape {U.shape}, expected {(T, K)}")
    G = np.ascontiguousarray(_gram(B))
    C = np.ascontiguousarray(X @ B)
    n_iter = np.zeros(T, dtype=np.int32)
    kkt = np.zeros(T)
    kern.lasso_cd(G, C, U, p.grad_scale, p.lam, int(p.max_iter), float(p.tol), n_iter, kkt)
    bad = np.flatnonzero(kkt > p.tol)
    if bad.size:
        r = int(bad[0])
        msg = (f"lasso did not converge on {bad.size} of {T} rows within {p.max_iter} sweeps "
               f"(row {r}: KKT residual {kkt[r]:.3g} > tol {p.tol:.3g})")
        if on_fail == "raise":
            raise ConvergenceError(msg, last=U[r].copy(), residual=float(kkt[r]), row=r)
        if on_fail == "warn":
            log.warning(msg)
    return U, CodingStats(n_iter=n_iter, kkt=kkt, n_nonconverged=int(bad.size))


def lasso_solve(x, B, p: SparseCodingParams, method="cd", backend=None) -> SparseCode:
    """Solve one lasso problem. ``method`` is ``"cd"`` or ``"feature_sign"``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    B = as_basis(B)
    if method == "feature_sign":
        return feature_sign(x, B, p)
    if method != "cd":
        raise ValueError(f"unknown lasso method {method!r}")
    U, stats = solve_codes(x[None, :], B, p, on_fail="ignore", backend=backend)
    u = U[0]
    res = kkt_residual(x, B, u, p)
    if res > p.tol:
        raise ConvergenceError(
            f"lasso did not converge within {p.max_iter} sweeps (KKT residual {res:.3g})",
            last=u, residual=res,
        )
    return SparseCode(u=u, kkt_residual=res, n_iter=int(stats.n_iter[0]))


def lasso_solve_batch(X, B, p: SparseCodingParams, method="cd", backend=None) -> list:
    """Per-row lasso; equal to calling ``lasso_solve`` on each row."""
    X = as_matrix(X)
    B = as_basis(B)
    _check_dims(X, B)
    out = []
    for i, x in enumerate(X):
        try:
            out.append(lasso_solve(x, B, p, method=method, backend=backend))
        except ConvergenceError as exc:
            raise ConvergenceError(f"row {i}: {exc}", last=exc.last, residual=exc.residual, row=i) from exc
    return out


def feature_sign(x, B, p: SparseCodingParams) -> SparseCode:
    """Active-set lasso solver (feature-sign search).

    Guesses the sign pattern, solves the resulting unconstrained quadratic on
    the active set, and line-searches towards it through every sign change.
    Used as an independent cross-check of coordinate descent.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    B = as_basis(B)
    _check_dims(x[None, :], B)
    K = B.shape[1]
    G = _gram(B)
    c = B.T @ x
    t = p.threshold
    u = np.zeros(K)
    lam = p.lam
    gs = p.grad_scale
    tol = p.tol

    def grad(v):
        return gs * (G @ v - c)

    def objective(v):
        r = x - B @ v
        return r @ r / p.sigma2 + lam * np.abs(v).sum()

    steps = 0
    while True:
        g = grad(u)
        zero = u == 0
        viol = np.where(zero, np.abs(g) - lam, -np.inf)
        i = int(np.argmax(viol)) if K else 0
        if K == 0 or viol[i] <= tol:
            nz = ~zero
            if not nz.any() or np.abs(g[nz] + lam * np.sign(u[nz])).max() <= tol:
                break
        else:
            u_sign_i = -np.sign(g[i])
        theta = np.sign(u)
        if K and viol[i] > tol:
            theta[i] = u_sign_i
        # feature-sign steps until the active coefficients are optimal
        while True:
            steps += 1
            if steps > p.max_iter:
                res = kkt_residual(x, B, u, p)
                raise ConvergenceError(
                    f"feature-sign search exceeded {p.max_iter} steps (KKT residual {res:.3g})",
                    last=u, residual=res,
                )
            A = np.flatnonzero(theta)
            GA = G[np.ix_(A, A)]
            rhs = c[A] - t * theta[A]
            evals, evecs = np.linalg.eigh(GA)
            cur = u[A]
            if evals[0] <= 1e-12 * max(np.max(np.diag(GA)), np.finfo(float).tiny):
                # dependent active columns: the restricted quadratic is unbounded
                # below along the null vector, so follow it to the first zero
                z = evecs[:, 0]
                if theta[A] @ z > 0:
                    z = -z
                hit = np.flatnonzero(cur * z < 0)
                if hit.size == 0:
                    raise ConvergenceError("feature-sign search hit an unbounded direction", last=u)
                ts = -cur[hit] / z[hit]
                j = int(np.argmin(ts))
                pt = cur + ts[j] * z
                pt[hit[j]] = 0.0
                u = u.copy()
                u[A] = pt
                theta = np.sign(u)
                continue
            target = evecs @ ((evecs.T @ rhs) / evals)
            flips = np.flatnonzero((np.sign(target) != np.sign(cur)) & (cur != 0))
            cands = [target]
            for j in flips:
                s = cur[j] / (cur[j] - target[j])
                pt = cur + s * (target - cur)
                pt[j] = 0.0
                cands.append(pt)
            best, best_f = None, np.inf
            for pt in cands:
                v = u.copy()
                v[A] = pt
                f = objective(v)
                if f < best_f:
                    best, best_f = v, f
            u = best
            theta = np.sign(u)
            nz = u != 0
            g = grad(u)
            if not nz.any() or np.abs(g[nz] + lam * theta[nz]).max() <= tol:
                break
    res = kkt_residual(x, B, u, p)
    return SparseCode(u=u, kkt_residual=res, n_iter=steps)


def omp_solve(x, B, k_max: int, tol=1e-12) -> SparseCode:
    """Orthogonal matching pursuit with at most ``k_max`` atoms.

    Atoms are ranked by |b_k' r| / ||b_k||; among near-equal correlations the
    lowest index wins. Coefficients are least-squares (least-norm when the
    selected columns are rank deficient, which is flagged in the result).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    B = as_basis(B)
    _check_dims(x[None, :], B)
    d, K = B.shape
    if not 1 <= k_max <= min(d, K):
        raise ValueError(f"k_max must lie in [1, {min(d, K)}], got {k_max}")
    norms = np.linalg.norm(B, axis=0)
    usable = norms > 0
    scale = np.where(usable, norms, 1.0)
    xnorm = np.linalg.norm(x)
    r = x.copy()
    S = []
    coef = np.zeros(0)
    rank_def = False
    for _ in range(k_max):
        if np.linalg.norm(r) <= tol * max(1.0, xnorm):
            break
        corr = np.where(usable, np.abs(B.T @ r) / scale, -1.0)
        corr[S] = -1.0
        top = corr.max()
        if top <= tol * max(1.0, xnorm):
            break
        j = int(np.flatnonzero(corr >= top * (1 - 1e-12))[0])
        S.append(j)
        coef, _, rank, _ = np.linalg.lstsq(B[:, S], x, rcond=None)
        rank_def = rank_def or rank < len(S)
        r = x - B[:, S] @ coef
    u = np.zeros(K)
    u[S] = coef
    return SparseCode(u=u, n_iter=len(S), rank_deficient=rank_def)


def _init_dictionary(X, K, rng):
    T, d = X.shape
    take = min(K, T)
    idx = np.sort(rng.choice(T, size=take, replace=False))
    B = X[idx].T.copy()
    if take < K:
        B = np.hstack([B, rng.standard_normal((d, K - take))])
    norms = np.linalg.norm(B, axis=0)
    for k in np.flatnonzero(norms == 0):
        B[:, k] = rng.standard_normal(d)
    return B / np.linalg.norm(B, axis=0)


def dict_learn(X, K: int, p: SparseCodingParams, outer_iters: int = 20, seed: int = 0,
               dict_passes: int = 1, return_log=False, backend=None):
    """Learn a d x K dictionary with unit-ball column constraints.

    Alternates warm-started coordinate-descent coding with block-coordinate
    column updates (each column is the exact constrained minimiser given the
    others), so the total objective never increases. Atoms that no feature
    uses are moved onto the worst-reconstructed features.
    """
    X = as_matrix(X)
    T, d = X.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if T < K:
        warnings.warn(f"training with fewer features ({T}) than atoms ({K})", stacklevel=2)
    rng = np.random.default_rng(seed)
    B = _init_dictionary(X, K, rng)
    U = np.zeros((T, K))
    info = DictLearnLog()
    for it in range(outer_iters):
        U, stats = solve_codes(X, B, p, U0=U, on_fail="warn", backend=backend)
        info.n_nonconverged += stats.n_nonconverged
        A = U.T @ U
        XU = X.T @ U
        for _ in range(dict_passes):
            for k in range(K):
                if A[k, k] <= 0:
                    continue
                b = B[:, k] + (XU[:, k] - B @ A[:, k]) / A[k, k]
                n = np.linalg.norm(b)
                B[:, k] = b / n if n > 1.0 else b
        dead = np.flatnonzero(np.diag(A) <= 0)
        if dead.size:
            R = X - U @ B.T
            err = np.einsum("ij,ij->i", R, R)
            order = np.argsort(-err, kind="stable")
            for k, row in zip(dead, order):
                n = math.sqrt(err[row])
                B[:, k] = R[row] / n if n > 0 else rng.standard_normal(d)
                B[:, k] /= max(1.0, np.linalg.norm(B[:, k]))
            info.dead_atoms_reset += int(dead.size)
            log.info("iteration %d: reset %d unused atoms", it, dead.size)
        info.objective.append(float(lasso_objective(X, B, U, p).sum()))
    for k in np.flatnonzero(np.linalg.norm(B, axis=0) == 0):
        B[:, k] = rng.standard_normal(d)
        B[:, k] /= np.linalg.norm(B[:, k])
    D = Dictionary(B, lam=p.lam, sigma2=p.sigma2)
    return (D, info) if return_log else D
