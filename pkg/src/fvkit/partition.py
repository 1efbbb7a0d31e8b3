"""How finely a GMM or a sparse-coding model covers feature space.

The resolution d is the mean Euclidean distance from a feature to the model
mean that explains it: the nearest component mean for a GMM, the sparse
reconstruction Bu* for a dictionary. Lower is finer.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import GmmModel, as_basis, as_matrix
from .errors import DimensionError
from .gmm import _sq_dists, gmm_fit_em
from .pca import pca_fit, pca_transform
from .sparse_coding import SparseCodingParams, default_lambda, dict_learn, solve_codes
from .synthetic import resolution_features

log = logging.getLogger(__name__)

CSV_COLUMNS = ("model", "param", "dim", "d")


def partition_resolution_gmm(X, g: GmmModel) -> float:
    """(1/T) sum_i min_k ||x_i - mu_k||."""
    X = as_matrix(X)
    if X.shape[1] != g.d:
        raise DimensionError(f"feature dimension {X.shape[1]} does not match GMM dimension {g.d}")
    return float(np.sqrt(_sq_dists(X, g.means).min(axis=1)).mean())


def partition_resolution_sc(X, B, p: SparseCodingParams, backend=None) -> float:
    """(1/T) sum_i ||x_i - B u_i*|| with u_i* the lasso code of x_i."""
    X, B = as_matrix(X), as_basis(B)
    U, _ = solve_codes(X, B, p, on_fail="raise", backend=backend)
    R = X - U @ B.T
    return float(np.linalg.norm(R, axis=1).mean())


@dataclass(frozen=True)
class ResolutionConfig:
    """Sweep settings. With ``features`` unset, a synthetic source is generated.

    Features are produced at the largest dimension in ``dims`` and reduced by
    PCA to every other dimension. Models are trained on one part of the data
    and d is measured on the rest (``n_test`` rows).
    """

    seed: int = 0
    dims: tuple = (100, 200, 500, 1000)
    gmm_components: int = 100
    sweep_dim: int = 500
    sweep_components: tuple = (100, 200, 500, 1000)
    codebook_size: int = 100
    lam: float | None = None
    n_atoms: int = 100
    n_active: int = 5
    noise: float = 0.03
    n_train: int = 4000
    n_test: int = 1000
    em_iters: int = 30
    dict_iters: int = 10
    features: np.ndarray | None = field(default=None, compare=False, repr=False)


def _source(cfg: ResolutionConfig):
    top = max(cfg.dims)
    if cfg.features is None:
        data = resolution_features(cfg.seed, top, cfg.n_atoms, cfg.n_train, cfg.n_test,
                                   cfg.n_active, cfg.noise)
        return data.train, data.test
    X = as_matrix(cfg.features)
    if X.shape[1] < top:
        raise DimensionError(f"features have dimension {X.shape[1]}, sweep needs {top}")
    if X.shape[0] <= cfg.n_test:
        raise ValueError(f"need more than n_test={cfg.n_test} features, got {X.shape[0]}")
    return X[:-cfg.n_test], X[-cfg.n_test:]


def _project(train, test, dim):
    if dim == train.shape[1]:
        return train, test
    model = pca_fit(train, dim)
    return pca_transform(train, model), pca_transform(test, model)


def resolution_experiment(cfg: ResolutionConfig = ResolutionConfig()) -> list:
    """Rows (model, param, dim, d): GMM and dictionary d at every dimension, then
    GMM d for every component count in ``sweep_components`` at ``sweep_dim``."""
    train, test = _source(cfg)
    dims = sorted(set(cfg.dims) | {cfg.sweep_dim})
    rows = []
    for dim in dims:
        tr, te = _project(train, test, dim)
        lam = cfg.lam if cfg.lam is not None else default_lambda(tr)
        p = SparseCodingParams(lam=lam)
        comps = [cfg.gmm_components]
        if dim == cfg.sweep_dim:
            comps = sorted(set(comps) | set(cfg.sweep_components))
        for m in comps:
            g = gmm_fit_em(tr, m, max_iter=cfg.em_iters, seed=cfg.seed)
            d = partition_resolution_gmm(te, g)
            log.info("gmm m=%d dim=%d d=%.6g", m, dim, d)
            rows.append(("gmm", m, dim, d))
        D = dict_learn(tr, cfg.codebook_size, p, outer_iters=cfg.dict_iters, seed=cfg.seed)
        d = partition_resolution_sc(te, D.B, p)
        log.info("sc K=%d dim=%d d=%.6g", cfg.codebook_size, dim, d)
        rows.append(("sc", cfg.codebook_size, dim, d))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for model, param, dim, d in rows:
        w.writerow([model, int(param), int(dim), repr(float(d))])
    return buf.getvalue()


def rows_from_csv(text: str) -> list:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    return [(m, int(k), int(dim), float(d)) for m, k, dim, d in reader]


def plot_svg(rows, sweep_dim: int = 500) -> str:
    """Two panels: d against dimension, and d against GMM size at ``sweep_dim``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "fvkit", "svg.fonttype": "none"}):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
        gmm_sizes = sorted({k for m, k, dim, _ in rows if m == "gmm"})
        base = min(gmm_sizes) if gmm_sizes else None
        for model, label in (("gmm", "GMM"), ("sc", "sparse coding")):
            pts = sorted((dim, d) for m, k, dim, d in rows if m == model and (model == "sc" or k == base))
            if pts:
                ax1.plot(*zip(*pts), marker="o", label=f"{label}")
        ax1.set_xlabel("feature dimension")
        ax1.set_ylabel("d")
        ax1.legend()
        sweep = sorted((k, d) for m, k, dim, d in rows if m == "gmm" and dim == sweep_dim)
        if sweep:
            ax2.plot(*zip(*sweep), marker="o", label="GMM")
        sc = [d for m, k, dim, d in rows if m == "sc" and dim == sweep_dim]
        if sc:
            ax2.axhline(sc[0], color="C1", linestyle="--", label="sparse coding")
        ax2.set_xlabel(f"number of Gaussians (dim {sweep_dim})")
        ax2.set_ylabel("d")
        ax2.legend()
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()
