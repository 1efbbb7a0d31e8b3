"""Numpy versions of the compiled kernels.

Same algorithms and update order as ``_compiled.pyx``; the lasso sweep is
vectorised across rows instead of running one row at a time, so results
agree with the compiled kernel to rounding but not bit-for-bit.
"""
import numpy as np

BACKEND = "python"
# sweeps after which Newton steps are tried even while signs still change
NEWTON_AFTER = 5
# Newton moves chained after one sweep
MAX_CHAIN = 4


def _kkt(Q, U, grad_scale, lam):
    g = -grad_scale * Q
    v = np.where(U > 0, np.abs(g + lam), np.where(U < 0, np.abs(g - lam), np.abs(g) - lam))
    return v.max(axis=1, initial=0.0)


def _newton(G, c, u, q, thresh):
    S = np.flatnonzero(u)
    if S.size == 0:
        return None, False
    s = np.sign(u[S])
    GS = G[np.ix_(S, S)]
    evals, evecs = np.linalg.eigh(GS)
    if evals[0] <= 1e-12 * np.max(np.diag(GS)):
        # dependent support: quadratic part is flat along the null vector z,
        # so slide downhill on the l1 term until a coefficient reaches zero
        z = evecs[:, 0]
        if s @ z > 0:
            z = -z
        hit = np.flatnonzero(u[S] * z < 0)
        if hit.size == 0:
            return None, False
        ts = -u[S][hit] / z[hit]
        j = int(np.argmin(ts))
        out = u.copy()
        out[S] += ts[j] * z
        out[S[hit[j]]] = 0.0
        return out, False
    v = evecs @ ((evecs.T @ (c[S] - thresh * s)) / evals)
    cross = np.flatnonzero(np.sign(v) != s)
    out = np.zeros_like(u)
    if cross.size == 0:
        f_old = np.sum(-0.5 * u[S] * (c[S] + q[S]) + thresh * np.abs(u[S]))
        f_new = np.sum(-0.5 * v * c[S] + 0.5 * thresh * np.abs(v))
        if f_new > f_old:
            return None, False
        out[S] = v
        return out, True
    # try the target with every sign-violating entry clipped to zero first
    f_old = np.sum(-0.5 * u[S] * (c[S] + q[S]) + thresh * np.abs(u[S]))
    w = np.where(np.sign(v) == s, v, 0.0)
    f_w = 0.5 * w @ GS @ w - c[S] @ w + thresh * np.abs(w).sum()
    if f_w < f_old:
        out[S] = w
        return out, False
    ts = u[S][cross] / (u[S][cross] - v[cross])
    j = int(np.argmin(ts))
    out[S] = u[S] + ts[j] * (v - u[S])
    out[S[cross[j]]] = 0.0
    return out, False


def lasso_cd(G, C, U, grad_scale, lam, max_iter, tol, n_iter, kkt):
    T, K = C.shape
    thresh = lam / grad_scale
    diag = np.diag(G).copy()
    safe = np.where(diag > 0, diag, 1.0)

    Q = C - U @ G
    res = _kkt(Q, U, grad_scale, lam)
    n_iter[:] = 0
    active = np.flatnonzero(res > tol)
    it = 0
    while active.size and it < max_iter:
        Ua, Qa = U[active], Q[active]
        flipped = np.zeros(active.size, dtype=bool)
        for k in range(K):
            uk = Ua[:, k]
            if diag[k] <= 0:
                new = np.zeros_like(uk)
            else:
                z = Qa[:, k] + diag[k] * uk
                new = np.sign(z) * np.maximum(np.abs(z) - thresh, 0.0) / safe[k]
            delta = new - uk
            moved = delta != 0
            if moved.any():
                flipped |= np.sign(new) != np.sign(uk)
                Ua[:, k] = new
                Qa[moved] -= delta[moved, None] * G[k][None, :]
        it += 1
        ra = _kkt(Qa, Ua, grad_scale, lam)
        for i in np.flatnonzero((ra > tol) & (~flipped | (it >= NEWTON_AFTER))):
            moved = False
            for _ in range(MAX_CHAIN):
                v, full = _newton(G, C[active[i]], Ua[i], Qa[i], thresh)
                if v is None:
                    break
                Ua[i] = v
                Qa[i] = C[active[i]] - v @ G
                moved = True
                if full:
                    break
            if moved:
                ra[i] = _kkt(Qa[i:i + 1], Ua[i:i + 1], grad_scale, lam)[0]
        done = ra <= tol
        if done.any():
            Qa[done] = C[active[done]] - Ua[done] @ G
            ra[done] = _kkt(Qa[done], Ua[done], grad_scale, lam)
        U[active], Q[active] = Ua, Qa
        res[active] = ra
        n_iter[active] = it
        active = active[ra > tol]
    kkt[:] = res


def svm_dual_epoch(X, y, alpha, w, qdiag, perm, C):
    pg_max, pg_min = -np.inf, np.inf
    for i in perm:
        if qdiag[i] <= 0:
            continue
        g = y[i] * float(w @ X[i]) - 1.0
        a_old = alpha[i]
        if a_old <= 0:
            pg = min(g, 0.0)
        elif a_old >= C:
            pg = max(g, 0.0)
        else:
            pg = g
        pg_max = max(pg_max, pg)
        pg_min = min(pg_min, pg)
        if pg != 0:
            a_new = min(max(a_old - g / qdiag[i], 0.0), C)
            alpha[i] = a_new
            step = (a_new - a_old) * y[i]
            if step != 0:
                w += step * X[i]
    return pg_max, pg_min
