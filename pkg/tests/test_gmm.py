import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fvkit.core import GmmModel
from fvkit.errors import DimensionError
from fvkit.gmm import (gmm_fit_em, gmm_loglik, gmm_mean_gradient, gmm_posteriors, gmm_posteriors_batch,
                       gmmfv_encode, gmmfv_pooled, variance_floor)
from oracles import central_difference, mixture_loglik


def _model(rng, m, d):
    w = rng.random(m) + 0.2
    return GmmModel(w / w.sum(), rng.standard_normal((m, d)), rng.random((m, d)) + 0.3)


def test_single_component_closed_form():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((500, 4)) * [1.0, 2.0, 0.5, 3.0] + 7.0
    g = gmm_fit_em(X, 1)
    assert np.allclose(g.means[0], X.mean(axis=0), atol=1e-6)
    assert np.allclose(g.variances[0], X.var(axis=0), atol=1e-6)
    assert g.weights[0] == 1.0


def test_two_separated_clusters_recovered():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.standard_normal((400, 2)) * 0.5 + [-5, 0], rng.standard_normal((400, 2)) * 0.5 + [5, 1]])
    g = gmm_fit_em(X, 2, seed=2)
    order = np.argsort(g.means[:, 0])
    assert np.allclose(g.means[order], [[-5, 0], [5, 1]], atol=0.1)
    assert np.allclose(g.weights, 0.5, atol=0.05)


@pytest.mark.parametrize("seed", range(5))
def test_loglik_trace_non_decreasing(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((300, 3)) @ rng.standard_normal((3, 3))
    g, info = gmm_fit_em(X, 4, max_iter=60, seed=seed, return_log=True)
    assert np.all(np.diff(info.loglik) >= -1e-9)
    assert info.loglik[-1] == pytest.approx(float(gmm_loglik(X, g).mean()), abs=1e-9)


def test_fit_is_deterministic():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((200, 3))
    assert gmm_fit_em(X, 3, seed=5) == gmm_fit_em(X, 3, seed=5)


def test_fit_requires_enough_features():
    with pytest.raises(ValueError):
        gmm_fit_em(np.zeros((2, 3)), 3)


def test_variance_floor_applied():
    X = np.column_stack([np.linspace(0, 1, 50), np.full(50, 2.0)])
    g = gmm_fit_em(X, 2)
    assert np.all(g.variances >= variance_floor(X))
    assert variance_floor(X) == pytest.approx(1e-6 * X.var(axis=0).mean())


def test_collapse_is_reinitialised(caplog):
    # two distinct points for three components: one component is left empty
    X = np.array([[0.0, 0.0]] * 30 + [[10.0, 10.0]] * 30)
    with caplog.at_level(logging.WARNING):
        g, info = gmm_fit_em(X, 3, max_iter=10, return_log=True)
    assert info.reinitialized
    assert "collapsed" in caplog.text
    assert np.isfinite(g.means).all() and np.all(g.weights > 0)
    # the trace is monotone between reinitialisation events
    cuts = [0] + [it + 1 for it, _ in info.reinitialized] + [len(info.loglik)]
    for a, b in zip(cuts[:-1], cuts[1:]):
        assert np.all(np.diff(info.loglik[a:b]) >= -1e-9)


def test_posteriors():
    rng = np.random.default_rng(4)
    g1 = GmmModel(np.ones(1), np.zeros((1, 3)), np.ones((1, 3)))
    assert gmm_posteriors(rng.standard_normal(3), g1).tolist() == [1.0]
    g2 = GmmModel(np.array([0.5, 0.5]), np.array([[0.0, 0.0], [100.0, 0.0]]), np.ones((2, 2)))
    assert gmm_posteriors(np.zeros(2), g2)[0] > 0.999
    g = _model(rng, 5, 3)
    P = gmm_posteriors_batch(rng.standard_normal((50, 3)) * 30, g)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)
    assert np.isfinite(P).all()


def test_loglik_matches_direct_formula():
    rng = np.random.default_rng(5)
    g = _model(rng, 3, 4)
    X = rng.standard_normal((6, 4))
    assert gmm_loglik(X, g).sum() == pytest.approx(mixture_loglik(X, g.weights, g.means, g.variances), rel=1e-12)


def test_feature_at_mean_block_values():
    g = GmmModel(np.array([0.25, 0.75]), np.array([[0.0, 0.0], [1e3, 1e3]]), np.ones((2, 2)))
    v = gmmfv_pooled(np.zeros((1, 2)), g)
    mean_block, var_block = v[:4].reshape(2, 2), v[4:].reshape(2, 2)
    assert np.allclose(mean_block[0], 0.0)
    assert np.allclose(var_block[0], -np.sqrt(1 / (2 * 0.25)))


def test_duplicated_rows_double_pooled_vector():
    rng = np.random.default_rng(6)
    g = _model(rng, 3, 4)
    X = rng.standard_normal((5, 4))
    assert np.allclose(gmmfv_pooled(np.vstack([X, X]), g), 2 * gmmfv_pooled(X, g), atol=1e-12)
    Y = rng.standard_normal((3, 4))
    assert np.allclose(gmmfv_pooled(np.vstack([X, Y]), g), gmmfv_pooled(X, g) + gmmfv_pooled(Y, g), atol=1e-12)


def test_mean_block_matches_finite_differences():
    rng = np.random.default_rng(7)
    g = _model(rng, 2, 4)
    X = rng.standard_normal((3, 4))

    def f(mu):
        return mixture_loglik(X, g.weights, mu, g.variances)

    fd = central_difference(f, np.array(g.means), 1e-6)
    an = gmm_mean_gradient(X, g)
    assert np.max(np.abs(fd - an) / np.maximum(np.abs(an), 1e-8)) < 1e-5
    # the encoder's mean block is the same gradient rescaled by sigma_k / sqrt(w_k)
    block = gmmfv_pooled(X, g, include_variance=False).reshape(2, 4)
    assert np.allclose(block, an * np.sqrt(g.variances) / np.sqrt(g.weights)[:, None], atol=1e-12)


def test_encode_layouts_and_dimension_check():
    rng = np.random.default_rng(8)
    g = _model(rng, 3, 4)
    X = rng.standard_normal((5, 4))
    full = gmmfv_encode(X, g)
    mean_only = gmmfv_encode(X, g, include_variance=False)
    assert full.values.size == 24 and full.layout == "gmmfvc"
    assert mean_only.values.size == 12 and mean_only.layout == "gmmfvc-mean"
    norms = np.linalg.norm(full.subvectors(), axis=1)
    assert np.allclose(norms, 1.0)
    with pytest.raises(DimensionError):
        gmmfv_encode(np.zeros((2, 5)), g)
