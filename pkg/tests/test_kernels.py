import numpy as np
import pytest

from fvkit import BACKEND, _kernels
from fvkit.classifier import svm_train
from fvkit.sparse_coding import SparseCodingParams, lasso_objective, solve_codes


def test_backend_selection():
    assert BACKEND in ("compiled", "python")
    assert "python" in _kernels.available_backends()
    assert _kernels.get_backend("python").BACKEND == "python"
    with pytest.raises(ValueError):
        _kernels.get_backend("fortran")


needs_compiled = pytest.mark.skipif("compiled" not in _kernels.available_backends(),
                                    reason="compiled extension not built")


@needs_compiled
@pytest.mark.parametrize("d,K,lam", [(8, 12, 0.05), (16, 5, 0.2), (32, 64, 0.1)])
def test_lasso_backends_agree(d, K, lam):
    rng = np.random.default_rng(d + K)
    B = rng.standard_normal((d, K))
    B /= np.linalg.norm(B, axis=0)
    X = rng.standard_normal((150, d))
    p = SparseCodingParams(lam=lam)
    U1, s1 = solve_codes(X, B, p, backend="compiled")
    U2, s2 = solve_codes(X, B, p, backend="python")
    assert s1.kkt.max() <= p.tol and s2.kkt.max() <= p.tol
    assert np.allclose(lasso_objective(X, B, U1, p), lasso_objective(X, B, U2, p), atol=1e-10)


@needs_compiled
def test_svm_backends_agree():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((60, 8))
    y = rng.integers(3, size=60)
    W1 = svm_train(X, y, backend="compiled").weights
    W2 = svm_train(X, y, backend="python").weights
    assert np.allclose(W1, W2, atol=1e-10)


def test_warm_start_is_respected():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((6, 9))
    B /= np.linalg.norm(B, axis=0)
    X = rng.standard_normal((20, 6))
    p = SparseCodingParams(lam=0.1)
    U, _ = solve_codes(X, B, p)
    U2, stats = solve_codes(X, B, p, U0=U)
    assert np.allclose(U, U2, atol=1e-12)
    assert stats.n_iter.max() <= 1
