"""Time the compiled kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from fvkit import _kernels
from fvkit.sparse_coding import SparseCodingParams, default_lambda, solve_codes
from fvkit.classifier import svm_train
from fvkit.synthetic import image_dataset


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def lasso_case(n_rows):
    rng = np.random.default_rng(0)
    ds = image_dataset(seed=0, n_train=4, n_test=0)
    X = np.vstack(ds.images)[:n_rows]
    B = ds.atoms + 0.05 * rng.standard_normal(ds.atoms.shape)
    B /= np.linalg.norm(B, axis=0)
    p = SparseCodingParams(lam=default_lambda(X))
    return lambda backend: solve_codes(X, B, p, backend=backend)[0], f"lasso {n_rows}x{B.shape[0]}, K={B.shape[1]}"


def overcomplete_case(n_rows, d, K, lam):
    rng = np.random.default_rng(1)
    B = rng.standard_normal((d, K))
    B /= np.linalg.norm(B, axis=0)
    X = rng.standard_normal((n_rows, d))
    p = SparseCodingParams(lam=lam)
    return lambda backend: solve_codes(X, B, p, backend=backend)[0], f"lasso {n_rows}x{d}, K={K}"


def svm_case(n, dim):
    rng = np.random.default_rng(0)
    y = rng.integers(3, size=n)
    X = rng.standard_normal((n, dim)) + 0.5 * np.eye(3, dim)[y] * np.sqrt(dim)
    return lambda backend: svm_train(X, y, seed=0, backend=backend).weights, f"svm {n}x{dim}, 3 classes"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = _kernels.available_backends()
    print(f"available backends: {', '.join(backends)}")
    print(f"{'case':34s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup  max |diff|")
    for run, name in (lasso_case(500), overcomplete_case(2000, 8, 12, 0.05), svm_case(300, 2000),
                      svm_case(1000, 50)):
        res = {b: _best(lambda: run(b), args.repeat) for b in backends}
        line = f"{name:34s} " + " ".join(f"{res[b][0]:9.4f}s" for b in backends)
        if len(backends) == 2:
            diff = float(np.abs(res["compiled"][1] - res["python"][1]).max())
            line += f"   {res['python'][0] / res['compiled'][0]:6.1f}x   {diff:.2e}"
        print(line)


if __name__ == "__main__":
    main()
