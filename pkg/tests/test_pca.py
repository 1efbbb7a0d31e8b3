import numpy as np
import pytest

from fvkit.core import FeatureSet
from fvkit.errors import DimensionError
from fvkit.pca import pca_fit, pca_inverse, pca_transform


def test_line_data_first_component():
    rng = np.random.default_rng(0)
    direction = np.array([1.0, 2.0, -2.0]) / 3.0
    X = rng.standard_normal((100, 1)) * direction + [1.0, 1.0, 1.0]
    model = pca_fit(X, 1)
    assert abs(model.components[:, 0] @ direction) > 0.999
    assert model.effective_rank == 1


def test_full_rank_is_an_isometry():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((40, 5)) @ rng.standard_normal((5, 5))
    model = pca_fit(X, 5)
    Y = pca_transform(X, model)
    dX = np.linalg.norm(X[:, None] - X[None], axis=2)
    dY = np.linalg.norm(Y[:, None] - Y[None], axis=2)
    assert np.abs(dX - dY).max() < 1e-8
    assert np.abs(pca_inverse(Y, model) - X).max() < 1e-8
    assert np.allclose(model.components.T @ model.components, np.eye(5), atol=1e-8)


def test_explained_variance_matches_eigenvalue():
    rng = np.random.default_rng(2)
    scales = np.array([5.0, 2.0, 1.0, 0.5])
    R, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    X = (rng.standard_normal((10000, 4)) * scales) @ R.T
    model = pca_fit(X, 2)
    assert model.eigenvalues[0] == pytest.approx(25.0, rel=0.02)


def test_transform_properties():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((200, 6)) @ rng.standard_normal((6, 6))
    model = pca_fit(X, 4)
    assert not pca_transform(X.mean(axis=0)[None], model).any()
    Y = pca_transform(X, model)
    cov = np.cov(Y, rowvar=False, ddof=1)
    assert np.allclose(np.diag(cov), model.eigenvalues, atol=1e-6)
    assert np.allclose(cov - np.diag(np.diag(cov)), 0, atol=1e-8)
    assert np.all(np.diff(model.eigenvalues) <= 0)
    idx = np.argmax(np.abs(model.components), axis=0)
    assert np.all(model.components[idx, np.arange(4)] > 0)


def test_whitening_gives_unit_variance():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((300, 3)) * [3.0, 1.0, 0.2]
    model = pca_fit(X, 3, whiten=True)
    Y = pca_transform(X, model)
    assert np.allclose(Y.var(axis=0, ddof=1), 1.0)
    assert np.abs(pca_inverse(Y, model) - X).max() < 1e-8


def test_featureset_in_featureset_out():
    X = FeatureSet(np.random.default_rng(5).standard_normal((20, 4)))
    assert isinstance(pca_transform(X, pca_fit(X, 2)), FeatureSet)


def test_errors():
    X = np.random.default_rng(6).standard_normal((5, 4))
    with pytest.raises(ValueError):
        pca_fit(X, 6)
    model = pca_fit(X, 2)
    with pytest.raises(DimensionError):
        pca_transform(np.zeros((2, 3)), model)
