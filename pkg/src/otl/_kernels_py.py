"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``."""
from __future__ import annotations

import numpy as np


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


ABSORB = 1e30


def sinkhorn_log(logk, log_w, log_c, tol, marginal_tol, max_iter):
    """Sinkhorn-Knopp scaling with log-domain potentials.

    Iterates ``alpha = w / (K beta)``, ``beta = c / (K^T alpha)`` on the
    kernel ``K = exp(logk)``. Large scalings are periodically absorbed into
    log potentials ``u, v`` so that ``exp(logk + u + v)`` never over- or
    underflows; the iterates are the same as a pure log-sum-exp
    implementation. Stops when the L1 change of ``log alpha`` is below
    ``tol`` and both marginals are within ``marginal_tol``.

    Returns ``(log_alpha, log_beta, iters, alpha_change, row_err)`` such that
    ``Q = exp(log_alpha[:, None] + logk + log_beta[None, :])``.
    """
    k, n = logk.shape
    w = np.exp(log_w)
    c = np.exp(log_c)
    v = np.full(n, -np.log(k))
    # the first half-steps run in log space: rows/columns of exp(logk) may underflow
    u = log_w - _lse(logk + v[None, :], axis=1)
    v = log_c - _lse(logk + u[:, None], axis=0)
    kt = np.exp(logk + u[:, None] + v[None, :])
    a, b = np.ones(k), np.ones(n)
    la_prev = u
    it = 1
    change = err = np.inf
    while it < max_iter:
        kb = kt @ b
        exact = True
        if not (kb > 0).all():
            v = v + np.log(b)
            u = log_w - _lse(logk + v[None, :], axis=1)
            kt = np.exp(logk + u[:, None] + v[None, :])
            a, b = np.ones(k), np.ones(n)
            kb = kt @ b
            exact = False
        err = float(np.abs(a * kb - w).max())
        a = w / kb
        la = u + np.log(a)
        change = float(np.abs(la - la_prev).sum())
        la_prev = la
        ka = kt.T @ a
        if exact and change < tol and err < marginal_tol:
            # the row update just made rows exact; stop only if columns still hold
            if float(np.abs(b * ka - c).max()) < marginal_tol:
                break
        if (ka > 0).all():
            b = c / ka
        else:
            u = u + np.log(a)
            v = log_c - _lse(logk + u[:, None], axis=0)
            kt = np.exp(logk + u[:, None] + v[None, :])
            a, b = np.ones(k), np.ones(n)
        it += 1
        if max(a.max(), b.max()) > ABSORB or min(a.min(), b.min()) < 1.0 / ABSORB:
            u, v = u + np.log(a), v + np.log(b)
            kt = np.exp(logk + u[:, None] + v[None, :])
            a, b = np.ones(k), np.ones(n)
    return u + np.log(a), v + np.log(b), it, change, err


def batch_hard(sim, labels):
    b = sim.shape[0]
    same = labels[:, None] == labels[None, :]
    eye = np.eye(b, dtype=bool)
    pos_mask = same & ~eye
    neg_mask = ~same
    pos = np.where(pos_mask, sim, np.inf).argmin(axis=1)
    neg = np.where(neg_mask, sim, -np.inf).argmax(axis=1)
    pos[~pos_mask.any(axis=1)] = -1
    neg[~neg_mask.any(axis=1)] = -1
    return pos.astype(np.int64), neg.astype(np.int64)


def dbscan_expand(indptr, indices, min_pts):
    n = len(indptr) - 1
    lab = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for p in range(n):
        if lab[p] != -1 or indptr[p + 1] - indptr[p] < min_pts:
            continue
        lab[p] = cluster
        stack = [p]
        while stack:
            q = stack.pop()
            if indptr[q + 1] - indptr[q] < min_pts:
                continue
            for t in indices[indptr[q]:indptr[q + 1]]:
                if lab[t] == -1:
                    lab[t] = cluster
                    stack.append(t)
        cluster += 1
    return lab, cluster
