"""Sparse-coding Fisher vector encoder.

Each local feature x contributes the outer product (x - B u*) u*' where u* is
its lasso code. This is the gradient of the minimised sparse-coding objective
with respect to B up to the constant factor -2/sigma2, obtained by treating
u* as fixed. The constant is dropped; it does not survive normalisation.

Pooled matrices are vectorised column by column so that sub-vector k (length
d) is column k, i.e. everything attributed to atom k.
"""
from __future__ import annotations

import numpy as np

from .core import FisherVector, as_basis, as_matrix
from .errors import DimensionError
from .pooling import NormalizationSpec, normalize
from .sparse_coding import SparseCodingParams, lasso_objective, lasso_solve, solve_codes


def scfv_encode_one(x, B, p: SparseCodingParams) -> np.ndarray:
    """d x K coding matrix of a single feature; columns of unused atoms are exactly zero."""
    x = np.asarray(x, dtype=np.float64).ravel()
    B = as_basis(B)
    u = lasso_solve(x, B, p).u
    return np.outer(x - B @ u, u)


def minimized_objective(x, B, p: SparseCodingParams) -> float:
    """min_u (1/sigma2)||x - Bu||^2 + lam||u||_1 as a function of B."""
    u = lasso_solve(x, B, p).u
    return float(lasso_objective(x, B, u, p)[0])


def objective_gradient(x, B, p: SparseCodingParams) -> np.ndarray:
    """Gradient of ``minimized_objective`` with respect to B: -(2/sigma2)(x - Bu*)u*'."""
    return -p.grad_scale * scfv_encode_one(x, B, p)


def vectorize(M) -> np.ndarray:
    """Flatten a d x K matrix so that column k becomes the k-th contiguous block."""
    return np.asarray(M, dtype=np.float64).T.ravel()


def scfv_pooled(X, B, p: SparseCodingParams, on_fail="warn", backend=None):
    """Sum over features of the coding matrices; returns (d x K matrix, non-converged count)."""
    X, B = as_matrix(X), as_basis(B)
    if X.shape[1] != B.shape[0]:
        raise DimensionError(f"feature dimension {X.shape[1]} does not match dictionary rows {B.shape[0]}")
    U, stats = solve_codes(X, B, p, on_fail=on_fail, backend=backend)
    R = X - U @ B.T
    return R.T @ U, stats.n_nonconverged


def _default_norm(d):
    return NormalizationSpec(subvector_len=d)


def scfv_encode_image(X, B, p: SparseCodingParams, norm: NormalizationSpec | None = None,
                      on_fail="warn", backend=None) -> FisherVector:
    X, B = as_matrix(X), as_basis(B)
    d, K = B.shape
    M, bad = scfv_pooled(X, B, p, on_fail=on_fail, backend=backend)
    v = normalize(vectorize(M), norm or _default_norm(d))
    return FisherVector(v, "scfvc", d=d, n_sub=K, n_nonconverged=bad)


def scfv_encode_images(images, B, p: SparseCodingParams, norm: NormalizationSpec | None = None,
                       on_fail="warn", backend=None) -> list:
    """Encode several images with one batched lasso solve over all their features."""
    B = as_basis(B)
    d, K = B.shape
    mats = [as_matrix(X) for X in images]
    if not mats:
        return []
    sizes = [m.shape[0] for m in mats]
    allX = np.vstack(mats)
    if allX.shape[1] != d:
        raise DimensionError(f"feature dimension {allX.shape[1]} does not match dictionary rows {d}")
    U, stats = solve_codes(allX, B, p, on_fail=on_fail, backend=backend)
    R = allX - U @ B.T
    bad = stats.kkt > p.tol
    out = []
    start = 0
    for n in sizes:
        sl = slice(start, start + n)
        M = R[sl].T @ U[sl]
        v = normalize(vectorize(M), norm or _default_norm(d))
        out.append(FisherVector(v, "scfvc", d=d, n_sub=K, n_nonconverged=int(bad[sl].sum())))
        start += n
    return out
