"""PCA by eigen-decomposition of the sample covariance."""
from __future__ import annotations

import logging

import numpy as np

from .core import FeatureSet, PcaModel, as_matrix
from .errors import DimensionError

log = logging.getLogger(__name__)


def pca_fit(X, out_dim: int, whiten: bool = False, rank_tol: float = 1e-10) -> PcaModel:
    """Top ``out_dim`` eigenvectors of the sample covariance (ddof=1).

    Each eigenvector is signed so that its largest-magnitude entry is positive.
    Eigenvalues below ``rank_tol`` times the largest one count as degenerate;
    the number of non-degenerate retained directions is ``effective_rank``.
    """
    X = as_matrix(X)
    T, d = X.shape
    if not 1 <= out_dim <= min(T, d):
        raise ValueError(f"out_dim must lie in [1, min(T, d) = {min(T, d)}], got {out_dim}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / max(T - 1, 1)
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:out_dim]
    evals = np.maximum(evals[order], 0.0)
    comps = evecs[:, order]
    idx = np.argmax(np.abs(comps), axis=0)
    signs = np.sign(comps[idx, np.arange(out_dim)])
    comps = comps * np.where(signs == 0, 1.0, signs)
    top = evals[0] if evals.size else 0.0
    rank = int(np.count_nonzero(evals > rank_tol * top)) if top > 0 else 0
    if rank < out_dim:
        log.warning("covariance is degenerate: effective rank %d < requested %d", rank, out_dim)
    return PcaModel(mean, comps, evals, whiten=whiten, effective_rank=rank)


def pca_transform(X, model: PcaModel, as_features: bool = True):
    """Project rows onto the principal axes: (x - mean) @ components."""
    wrap = isinstance(X, FeatureSet) and as_features
    X = as_matrix(X)
    if X.shape[1] != model.d:
        raise DimensionError(f"feature dimension {X.shape[1]} does not match PCA input dimension {model.d}")
    Y = (X - model.mean) @ model.components
    if model.whiten:
        scale = np.sqrt(model.eigenvalues)
        Y = np.divide(Y, scale, out=np.zeros_like(Y), where=scale > 0)
    return FeatureSet(Y) if wrap else Y


def pca_inverse(Y, model: PcaModel) -> np.ndarray:
    Y = as_matrix(Y)
    if model.whiten:
        Y = Y * np.sqrt(model.eigenvalues)
    return Y @ model.components.T + model.mean
