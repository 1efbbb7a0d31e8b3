import numpy as np
import pytest

from fvkit.pooling import NormalizationSpec
from fvkit.scfvc import (minimized_objective, objective_gradient, scfv_encode_image, scfv_encode_images,
                         scfv_encode_one, scfv_pooled, vectorize)
from fvkit.sparse_coding import SparseCodingParams, lasso_solve
from oracles import central_difference


def _dict(rng, d, K):
    B = rng.standard_normal((d, K))
    return B / np.linalg.norm(B, axis=0)


def test_zero_code_gives_zero_matrix():
    rng = np.random.default_rng(0)
    B = _dict(rng, 6, 4)
    assert not scfv_encode_one(np.zeros(6), B, SparseCodingParams(lam=0.1)).any()
    x = rng.standard_normal(6)
    assert not scfv_encode_one(x, B, SparseCodingParams(lam=1e6)).any()


def test_single_atom_closed_form():
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    B = Q[:, :4]
    lam, sigma2 = 0.1, 1.0
    x = B[:, 0].copy()
    M = scfv_encode_one(x, B, SparseCodingParams(lam=lam, sigma2=sigma2))
    u1 = max(0.0, 1 - lam * sigma2 / 2)
    assert np.allclose(M[:, 0], (x - u1 * B[:, 0]) * u1, atol=1e-12)
    assert not M[:, 1:].any()


def test_columns_vanish_exactly_for_unused_atoms():
    rng = np.random.default_rng(2)
    B = _dict(rng, 8, 12)
    p = SparseCodingParams(lam=0.3)
    for _ in range(20):
        x = rng.standard_normal(8)
        u = lasso_solve(x, B, p).u
        M = scfv_encode_one(x, B, p)
        assert np.array_equal(np.any(M != 0, axis=0), u != 0) or np.allclose(x - B @ u, 0)


def test_gradient_matches_finite_differences_8x5():
    rng = np.random.default_rng(3)
    B = _dict(rng, 8, 5)
    x = rng.standard_normal(8)
    p = SparseCodingParams(lam=0.1, tol=1e-12)
    fd = central_difference(lambda A: minimized_objective(x, A, p), B, 1e-5)
    an = objective_gradient(x, B, p)
    rel = np.abs(fd - an) / np.maximum(np.abs(an), 1e-6)
    assert rel.max() < 1e-4


def test_vectorisation_is_column_major():
    M = np.arange(6.0).reshape(3, 2)
    assert vectorize(M).tolist() == [0.0, 2.0, 4.0, 1.0, 3.0, 5.0]


def test_pooling_is_additive_and_permutation_invariant():
    rng = np.random.default_rng(4)
    B = _dict(rng, 6, 8)
    p = SparseCodingParams(lam=0.1)
    X1, X2 = rng.standard_normal((5, 6)), rng.standard_normal((7, 6))
    M1, _ = scfv_pooled(X1, B, p)
    M2, _ = scfv_pooled(X2, B, p)
    M12, _ = scfv_pooled(np.vstack([X1, X2]), B, p)
    assert np.allclose(M12, M1 + M2, atol=1e-12)
    Mp, _ = scfv_pooled(np.vstack([X2, X1])[::-1], B, p)
    assert np.allclose(Mp, M12, atol=1e-12)
    per = sum(scfv_encode_one(x, B, p) for x in X1)
    assert np.allclose(per, M1, atol=1e-12)


def test_single_feature_image_equals_normalised_one():
    rng = np.random.default_rng(5)
    B = _dict(rng, 6, 8)
    p = SparseCodingParams(lam=0.1)
    x = rng.standard_normal(6)
    fv = scfv_encode_image(x[None, :], B, p)
    v = vectorize(scfv_encode_one(x, B, p))
    v = np.sign(v) * np.sqrt(np.abs(v))
    blocks = v.reshape(8, 6)
    n = np.linalg.norm(blocks, axis=1, keepdims=True)
    expected = np.where(n > 0, blocks / np.where(n > 0, n, 1), 0).ravel()
    assert np.allclose(fv.values, expected, atol=1e-12)
    assert fv.layout == "scfvc" and fv.d == 6 and fv.n_sub == 8


def test_all_zero_codes_give_zero_vector():
    rng = np.random.default_rng(6)
    B = _dict(rng, 6, 8)
    fv = scfv_encode_image(rng.standard_normal((4, 6)) * 1e-3, B, SparseCodingParams(lam=10.0))
    assert not fv.values.any()


def test_batched_encoding_matches_per_image_and_is_deterministic():
    rng = np.random.default_rng(7)
    B = _dict(rng, 6, 8)
    p = SparseCodingParams(lam=0.1)
    imgs = [rng.standard_normal((n, 6)) for n in (3, 5, 1)]
    norm = NormalizationSpec(subvector_len=6, order="intra-power", global_l2=True)
    batch = scfv_encode_images(imgs, B, p, norm)
    for X, fv in zip(imgs, batch):
        single = scfv_encode_image(X, B, p, norm)
        assert np.allclose(fv.values, single.values, atol=1e-12)
    again = scfv_encode_images(imgs, B, p, norm)
    assert all(a.values.tobytes() == b.values.tobytes() for a, b in zip(batch, again))
