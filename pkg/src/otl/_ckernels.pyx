# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror ``otl._kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, fmax, fmin, INFINITY

cnp.import_array()


cdef inline double _lse_row(const double[:, ::1] logk, const double[::1] v,
                            Py_ssize_t y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double m = -INFINITY, s = 0.0, t
    for i in range(n):
        t = logk[y, i] + v[i]
        if t > m:
            m = t
    if m == -INFINITY:
        return m
    for i in range(n):
        s += exp(logk[y, i] + v[i] - m)
    return m + log(s)


cdef inline double _lse_col(const double[:, ::1] logk, const double[::1] u,
                            Py_ssize_t i, Py_ssize_t k) noexcept nogil:
    cdef Py_ssize_t y
    cdef double m = -INFINITY, s = 0.0, t
    for y in range(k):
        t = logk[y, i] + u[y]
        if t > m:
            m = t
    if m == -INFINITY:
        return m
    for y in range(k):
        s += exp(logk[y, i] + u[y] - m)
    return m + log(s)


cdef double ABSORB = 1e30


cdef void _rebuild(const double[:, ::1] logk, double[::1] u, double[::1] v,
                   double[:, ::1] kt, double[::1] a, double[::1] b) noexcept nogil:
    """Absorb the scalings into the potentials and recompute the kernel."""
    cdef Py_ssize_t y, i, k = logk.shape[0], n = logk.shape[1]
    for y in range(k):
        u[y] += log(a[y])
        a[y] = 1.0
    for i in range(n):
        v[i] += log(b[i])
        b[i] = 1.0
    for y in range(k):
        for i in range(n):
            kt[y, i] = exp(logk[y, i] + u[y] + v[i])


cdef void _log_alpha(const double[:, ::1] logk, const double[::1] log_w, double[::1] u,
                     double[::1] v) noexcept nogil:
    cdef Py_ssize_t y
    for y in range(logk.shape[0]):
        u[y] = log_w[y] - _lse_row(logk, v, y, logk.shape[1])


cdef void _log_beta(const double[:, ::1] logk, const double[::1] log_c, double[::1] u,
                    double[::1] v) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(logk.shape[1]):
        v[i] = log_c[i] - _lse_col(logk, u, i, logk.shape[0])


def sinkhorn_log(double[:, ::1] logk, double[::1] log_w, double[::1] log_c,
                 double tol, double marginal_tol, Py_ssize_t max_iter):
    cdef Py_ssize_t k = logk.shape[0], n = logk.shape[1]
    cdef Py_ssize_t y, i, it = 1
    cdef double change = INFINITY, err = INFINITY, s, la, d, amax, amin
    cdef bint exact, ok
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u_arr = np.empty(k)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_arr = np.full(n, -log(<double>k))
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef double[::1] a = np.ones(k)
    cdef double[::1] b = np.ones(n)
    cdef double[::1] kb = np.empty(k)
    cdef double[::1] ka = np.empty(n)
    cdef double[::1] la_prev = np.empty(k)
    cdef double[::1] w = np.exp(np.asarray(log_w))
    cdef double[::1] c = np.exp(np.asarray(log_c))
    cdef double[:, ::1] kt = np.empty((k, n))
    with nogil:
        # the first half-steps run in log space: rows/columns of exp(logk) may underflow
        _log_alpha(logk, log_w, u, v)
        _log_beta(logk, log_c, u, v)
        _rebuild(logk, u, v, kt, a, b)
        for y in range(k):
            la_prev[y] = u[y]
        while it < max_iter:
            exact = True
            ok = True
            for y in range(k):
                s = 0.0
                for i in range(n):
                    s += kt[y, i] * b[i]
                kb[y] = s
                if not s > 0:
                    ok = False
            if not ok:
                for i in range(n):
                    v[i] += log(b[i])
                    b[i] = 1.0
                _log_alpha(logk, log_w, u, v)
                for y in range(k):
                    a[y] = 1.0
                _rebuild(logk, u, v, kt, a, b)
                for y in range(k):
                    s = 0.0
                    for i in range(n):
                        s += kt[y, i]
                    kb[y] = s
                exact = False
            err = 0.0
            change = 0.0
            for y in range(k):
                d = fabs(a[y] * kb[y] - w[y])
                if d > err:
                    err = d
                a[y] = w[y] / kb[y]
                la = u[y] + log(a[y])
                change += fabs(la - la_prev[y])
                la_prev[y] = la
            for i in range(n):
                ka[i] = 0.0
            for y in range(k):
                for i in range(n):
                    ka[i] += kt[y, i] * a[y]
            if exact and change < tol and err < marginal_tol:
                d = 0.0
                for i in range(n):
                    d = fmax(d, fabs(b[i] * ka[i] - c[i]))
                if d < marginal_tol:
                    break
            ok = True
            for i in range(n):
                if not ka[i] > 0:
                    ok = False
            if ok:
                for i in range(n):
                    b[i] = c[i] / ka[i]
            else:
                for y in range(k):
                    u[y] += log(a[y])
                    a[y] = 1.0
                _log_beta(logk, log_c, u, v)
                for i in range(n):
                    b[i] = 1.0
                _rebuild(logk, u, v, kt, a, b)
            it += 1
            amax = 0.0
            amin = INFINITY
            for y in range(k):
                amax = fmax(amax, a[y])
                amin = fmin(amin, a[y])
            for i in range(n):
                amax = fmax(amax, b[i])
                amin = fmin(amin, b[i])
            if amax > ABSORB or amin < 1.0 / ABSORB:
                _rebuild(logk, u, v, kt, a, b)
    for y in range(k):
        u[y] += log(a[y])
    for i in range(n):
        v[i] += log(b[i])
    return u_arr, v_arr, it, change, err


def batch_hard(double[:, ::1] sim, long[::1] labels):
    cdef Py_ssize_t b = sim.shape[0], i, j
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pos_arr = np.full(b, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] neg_arr = np.full(b, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] pos = pos_arr
    cdef cnp.int64_t[::1] neg = neg_arr
    cdef double best_p, best_n
    with nogil:
        for i in range(b):
            best_p = INFINITY
            best_n = -INFINITY
            for j in range(b):
                if j == i:
                    continue
                if labels[j] == labels[i]:
                    if sim[i, j] < best_p:
                        best_p = sim[i, j]
                        pos[i] = j
                else:
                    if sim[i, j] > best_n:
                        best_n = sim[i, j]
                        neg[i] = j
    return pos_arr, neg_arr


def dbscan_expand(long[::1] indptr, long[::1] indices, Py_ssize_t min_pts):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lab_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stack_arr = np.empty(max(indices.shape[0], 1) + n, dtype=np.int64)
    cdef cnp.int64_t[::1] lab = lab_arr
    cdef cnp.int64_t[::1] stack = stack_arr
    cdef Py_ssize_t p, q, t, top, cluster = 0
    with nogil:
        for p in range(n):
            if lab[p] != -1 or indptr[p + 1] - indptr[p] < min_pts:
                continue
            lab[p] = cluster
            top = 0
            stack[top] = p
            top += 1
            while top > 0:
                top -= 1
                q = stack[top]
                if indptr[q + 1] - indptr[q] < min_pts:
                    continue
                for t in range(indptr[q], indptr[q + 1]):
                    if lab[indices[t]] == -1:
                        lab[indices[t]] = cluster
                        stack[top] = indices[t]
                        top += 1
            cluster += 1
    return lab_arr, cluster
