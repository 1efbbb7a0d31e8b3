# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: lasso coordinate descent and one epoch of SVM dual CD."""
import numpy as np

from libc.math cimport fabs, sqrt

BACKEND = "compiled"
# sweeps after which Newton steps are tried even while signs still change
cdef int NEWTON_AFTER = 5
# Newton moves chained after one sweep
cdef int MAX_CHAIN = 1000000


cdef inline double _soft(double z, double t) nogil:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


cdef inline double _kkt(double[::1] q, double[:, ::1] U, Py_ssize_t r, Py_ssize_t K,
                        double grad_scale, double lam) nogil:
    cdef Py_ssize_t k
    cdef double g, v, worst = 0.0
    for k in range(K):
        g = -grad_scale * q[k]
        if U[r, k] > 0.0:
            v = fabs(g + lam)
        elif U[r, k] < 0.0:
            v = fabs(g - lam)
        else:
            v = fabs(g) - lam
        if v > worst:
            worst = v
    return worst


cdef inline void _residual(double[:, ::1] G, double[:, ::1] C, double[:, ::1] U,
                           double[::1] q, Py_ssize_t r, Py_ssize_t K) nogil:
    cdef Py_ssize_t j, k
    cdef double s
    for j in range(K):
        s = C[r, j]
        for k in range(K):
            if U[r, k] != 0.0:
                s -= G[j, k] * U[r, k]
        q[j] = s


cdef int _null_step(double[:, ::1] U, Py_ssize_t r, Py_ssize_t[::1] S,
                    double[:, ::1] L, double[::1] w, Py_ssize_t a) nogil:
    """Column S[a] is dependent on S[:a]: slide along the null direction.

    B[:, S] z = 0 for z = [L^-T L[a, :a], -1], so the quadratic part is flat
    along z and the l1 term is linear; move downhill until a coefficient hits
    zero.
    """
    cdef Py_ssize_t i, j, hit = -1
    cdef double s, sdot = 0.0, t = 1e300, ti, sgn
    if a == 0:
        return 0
    for i in range(a - 1, -1, -1):
        s = L[a, i]
        for j in range(i + 1, a):
            s -= L[j, i] * w[j]
        w[i] = s / L[i, i]
    w[a] = -1.0
    for i in range(a + 1):
        sgn = 1.0 if U[r, S[i]] > 0.0 else -1.0
        sdot += sgn * w[i]
    if sdot > 0.0:
        for i in range(a + 1):
            w[i] = -w[i]
    for i in range(a + 1):
        if U[r, S[i]] * w[i] < 0.0:
            ti = -U[r, S[i]] / w[i]
            if ti < t:
                t = ti
                hit = i
    if hit < 0:
        return 0
    for i in range(a + 1):
        U[r, S[i]] += t * w[i]
    U[r, S[hit]] = 0.0
    return 2


cdef int _newton(double[:, ::1] G, double[:, ::1] C, double[:, ::1] U, double[::1] q,
                  Py_ssize_t r, Py_ssize_t K, double thresh,
                  Py_ssize_t[::1] S, double[:, ::1] L, double[::1] v, double[::1] w) nogil:
    """Exact solve of the lasso restricted to the current sign pattern.

    Moves to the pattern's exact minimiser when it keeps every sign (and does
    not raise f(u) = 0.5 u'Gu - c'u + thresh |u|_1), otherwise as far towards
    it as the first coefficient that reaches zero, unless clipping the
    minimiser's sign violations to zero already lowers f. Returns 0 for no
    move, 1 for a full step and 2 for a step that changed the support.
    """
    cdef Py_ssize_t n = 0, a, b, k
    cdef double s, f_old = 0.0, f_new = 0.0, dmax = 0.0
    cdef double t = 1.0, ta, ua
    cdef Py_ssize_t hit = -1
    for k in range(K):
        if U[r, k] != 0.0:
            S[n] = k
            n += 1
            f_old += -0.5 * U[r, k] * (C[r, k] + q[k]) + thresh * fabs(U[r, k])
            if G[k, k] > dmax:
                dmax = G[k, k]
    if n == 0:
        return 0
    # Cholesky of G[S, S]
    for a in range(n):
        for b in range(a + 1):
            s = G[S[a], S[b]]
            for k in range(b):
                s -= L[a, k] * L[b, k]
            if a == b:
                if s <= 1e-12 * dmax:
                    return _null_step(U, r, S, L, v, a)
                L[a, a] = sqrt(s)
            else:
                L[a, b] = s / L[b, b]
    # rhs c_S - thresh * sign, forward then back substitution
    for a in range(n):
        k = S[a]
        s = C[r, k] - (thresh if U[r, k] > 0.0 else -thresh)
        for b in range(a):
            s -= L[a, b] * v[b]
        v[a] = s / L[a, a]
    for a in range(n - 1, -1, -1):
        s = v[a]
        for b in range(a + 1, n):
            s -= L[b, a] * v[b]
        v[a] = s / L[a, a]
    # full step if every sign survives, otherwise stop at the first zero crossing;
    # the objective restricted to the pattern is a convex quadratic minimised at v
    for a in range(n):
        ua = U[r, S[a]]
        if (v[a] > 0.0) != (ua > 0.0) or v[a] == 0.0:
            ta = ua / (ua - v[a])
            if ta < t:
                t = ta
                hit = a
    if hit < 0:
        for a in range(n):
            f_new += -0.5 * v[a] * C[r, S[a]] + 0.5 * thresh * fabs(v[a])
        if f_new > f_old:
            return 0
        for a in range(n):
            U[r, S[a]] = v[a]
        return 1
    # try the target with every sign-violating entry clipped to zero first
    for a in range(n):
        ua = U[r, S[a]]
        w[a] = v[a] if (v[a] > 0.0) == (ua > 0.0) and v[a] != 0.0 else 0.0
    for a in range(n):
        if w[a] == 0.0:
            continue
        s = 0.5 * G[S[a], S[a]] * w[a]
        for b in range(a):
            s += G[S[a], S[b]] * w[b]
        f_new += w[a] * (s - C[r, S[a]]) + thresh * fabs(w[a])
    if f_new < f_old:
        for a in range(n):
            U[r, S[a]] = w[a]
        return 2
    for a in range(n):
        k = S[a]
        U[r, k] = U[r, k] + t * (v[a] - U[r, k])
    U[r, S[hit]] = 0.0
    return 2


def lasso_cd(double[:, ::1] G, double[:, ::1] C, double[:, ::1] U,
             double grad_scale, double lam, int max_iter, double tol,
             int[::1] n_iter, double[::1] kkt):
    """Cyclic coordinate descent with covariance updates, one row at a time.

    Minimises (grad_scale/2) * (u'Gu - 2c'u) + lam * |u|_1 for every row c of
    C, warm-starting from and overwriting the matching row of U. After each
    sweep that left the sign pattern unchanged (or from sweep ``NEWTON_AFTER``
    on), exact Newton steps on the current sign pattern are chained until one
    lands without a sign change; every move is a descent step.
    """
    cdef Py_ssize_t T = C.shape[0], K = C.shape[1]
    cdef Py_ssize_t r, k, j
    cdef int it
    cdef int step, moves, flipped
    cdef double thresh = lam / grad_scale
    cdef double gkk, uk, z, new, delta, res
    cdef double[::1] q = np.empty(K, dtype=np.float64)
    cdef double[::1] v = np.empty(K, dtype=np.float64)
    cdef double[::1] w = np.empty(K, dtype=np.float64)
    cdef double[:, ::1] L = np.empty((K, K), dtype=np.float64)
    cdef Py_ssize_t[::1] S = np.empty(K, dtype=np.intp)

    with nogil:
        for r in range(T):
            _residual(G, C, U, q, r, K)
            res = _kkt(q, U, r, K, grad_scale, lam)
            it = 0
            while res > tol and it < max_iter:
                flipped = 0
                for k in range(K):
                    gkk = G[k, k]
                    uk = U[r, k]
                    if gkk <= 0.0:
                        new = 0.0
                    else:
                        z = q[k] + gkk * uk
                        new = _soft(z, thresh) / gkk
                    delta = new - uk
                    if delta != 0.0:
                        if (new > 0.0) != (uk > 0.0) or (new < 0.0) != (uk < 0.0):
                            flipped = 1
                        U[r, k] = new
                        for j in range(K):
                            q[j] -= delta * G[j, k]
                it += 1
                res = _kkt(q, U, r, K, grad_scale, lam)
                if res > tol and (flipped == 0 or it >= NEWTON_AFTER):
                    moves = 0
                    step = 2
                    while step == 2 and moves < MAX_CHAIN:
                        step = _newton(G, C, U, q, r, K, thresh, S, L, v, w)
                        moves += 1
                        if step == 2:
                            _residual(G, C, U, q, r, K)
                    if moves > 1 or step == 1:
                        _residual(G, C, U, q, r, K)
                        res = _kkt(q, U, r, K, grad_scale, lam)
                        continue
                if res <= tol:
                    _residual(G, C, U, q, r, K)
                    res = _kkt(q, U, r, K, grad_scale, lam)
            n_iter[r] = it
            kkt[r] = res


def svm_dual_epoch(double[:, ::1] X, double[::1] y, double[::1] alpha, double[::1] w,
                   double[::1] qdiag, long long[::1] perm, double C):
    """One pass of dual coordinate descent for the L1-loss linear SVM.

    Returns the (max, min) projected gradient seen during the pass.
    """
    cdef Py_ssize_t n = perm.shape[0], D = X.shape[1]
    cdef Py_ssize_t t, i, j
    cdef double g, pg, a_old, a_new, step
    cdef double pg_max = -1e300, pg_min = 1e300

    with nogil:
        for t in range(n):
            i = perm[t]
            if qdiag[i] <= 0.0:
                continue
            g = 0.0
            for j in range(D):
                g += w[j] * X[i, j]
            g = y[i] * g - 1.0
            a_old = alpha[i]
            if a_old <= 0.0:
                pg = g if g < 0.0 else 0.0
            elif a_old >= C:
                pg = g if g > 0.0 else 0.0
            else:
                pg = g
            if pg > pg_max:
                pg_max = pg
            if pg < pg_min:
                pg_min = pg
            if pg != 0.0:
                a_new = a_old - g / qdiag[i]
                if a_new < 0.0:
                    a_new = 0.0
                elif a_new > C:
                    a_new = C
                alpha[i] = a_new
                step = (a_new - a_old) * y[i]
                if step != 0.0:
                    for j in range(D):
                        w[j] += step * X[i, j]
    return pg_max, pg_min
