"""Pseudo-label refinement by entropy-regularized optimal transport.

Given a model's joint class/sample probabilities ``P`` (K x N, each column
summing to 1/N) the refined soft labels are the solution of

    min_{Q in U(w, c)}  <Q, -log P> - (1/lam) H(Q)

over the transport polytope ``U(w, c) = {Q >= 0 : Q 1 = w, Q^T 1 = c}``. The
minimizer has the scaling form ``Q = diag(alpha) P^lam diag(beta)`` and is
found by Sinkhorn-Knopp iteration, run in the log domain because ``P^lam``
underflows double precision for large ``lam``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NotConverged, ShapeMismatch
from .numerics import as_matrix, log_softmax_temp

P_FLOOR = 1e-300
NOT_CONVERGED_ERR = 1e-3


@dataclass(frozen=True)
class TransportPolytope:
    """Row marginal ``w`` (per-class mass) and column marginal ``c`` (per-sample mass)."""

    w: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).ravel()
        c = np.asarray(self.c, dtype=np.float64).ravel()
        if (w <= 0).any() or (c <= 0).any():
            raise ValueError("marginals must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-10 or abs(c.sum() - 1.0) > 1e-10:
            raise ValueError("marginals must each sum to 1")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "c", c)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.w), len(self.c)


def uniform_polytope(k: int, n: int) -> TransportPolytope:
    """Equipartition: every class gets mass 1/K, every sample 1/N."""
    if k < 1 or n < 1:
        raise ValueError("K and N must be >= 1")
    return TransportPolytope(np.full(k, 1.0 / k), np.full(n, 1.0 / n))


def polytope_with_row_marginal(w, n: int) -> TransportPolytope:
    """Custom class proportions (e.g. a source-domain class histogram)."""
    w = np.asarray(w, dtype=np.float64)
    return TransportPolytope(w / w.sum(), np.full(n, 1.0 / n))


@dataclass(frozen=True)
class SinkhornConfig:
    lam: float = 25.0
    tol: float = 0.1
    max_iter: int = 1000
    marginal_tol: float = 1e-6

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if not self.tol > 0 or not self.marginal_tol > 0:
            raise ValueError("tolerances must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SinkhornResult:
    Q: np.ndarray
    iters: int
    converged: bool
    marginal_err: float
    alpha_change: float
    objective: float


def transport_objective(Q, log_p, lam: float) -> float:
    """``<Q, -log P> - H(Q)/lam``, the quantity the solver minimizes."""
    Q = np.asarray(Q, dtype=np.float64)
    nz = Q > 0
    neg_entropy = float((Q[nz] * np.log(Q[nz])).sum())
    return float(-(Q * log_p).sum()) + neg_entropy / lam


def marginal_error(Q, poly: TransportPolytope) -> float:
    return float(max(np.abs(Q.sum(axis=1) - poly.w).max(),
                     np.abs(Q.sum(axis=0) - poly.c).max()))


def sinkhorn_log_p(log_p, poly: TransportPolytope, cfg: SinkhornConfig = SinkhornConfig(),
                   impl=None) -> SinkhornResult:
    """Solve the entropic transport problem given ``log P`` directly."""
    log_p = as_matrix(log_p)
    if log_p.shape != poly.shape:
        raise ShapeMismatch(f"P is {log_p.shape}, polytope is {poly.shape}")
    log_p = np.maximum(log_p, np.log(P_FLOOR))
    logk = cfg.lam * log_p
    la, lb, iters, change, _ = kernels.sinkhorn_log(
        logk, np.log(poly.w), np.log(poly.c), cfg.tol, cfg.marginal_tol, cfg.max_iter, impl=impl)
    Q = np.exp(la[:, None] + logk + lb[None, :])
    err = marginal_error(Q, poly)
    converged = iters < cfg.max_iter
    if not converged and err > NOT_CONVERGED_ERR:
        warnings.warn(NotConverged(iters, err), stacklevel=2)
    return SinkhornResult(Q, int(iters), converged, err, float(change),
                          transport_objective(Q, log_p, cfg.lam))


def sinkhorn(P, poly: TransportPolytope, cfg: SinkhornConfig = SinkhornConfig(),
             impl=None) -> SinkhornResult:
    """Project the joint probability matrix ``P`` onto the polytope."""
    P = as_matrix(P)
    return sinkhorn_log_p(np.log(np.maximum(P, P_FLOOR)), poly, cfg, impl=impl)


def joint_log_probs(features, prototypes, tau: float) -> np.ndarray:
    """``log P`` with ``P[k, i] = softmax_k(c_k . f_i / tau) / N``."""
    features = as_matrix(features)
    prototypes = as_matrix(prototypes)
    if features.shape[1] != prototypes.shape[1]:
        raise ShapeMismatch(f"feature dim {features.shape[1]} != prototype dim {prototypes.shape[1]}")
    logits = prototypes @ features.T
    return log_softmax_temp(logits, tau, axis=0) - np.log(features.shape[0])


def refine(features, prototypes, tau: float, poly: TransportPolytope | None = None,
           cfg: SinkhornConfig = SinkhornConfig(), impl=None) -> SinkhornResult:
    """Refined soft pseudo labels (K x N) for ``features`` against ``prototypes``."""
    log_p = joint_log_probs(features, prototypes, tau)
    if poly is None:
        poly = uniform_polytope(*log_p.shape)
    return sinkhorn_log_p(log_p, poly, cfg, impl=impl)


def harden(Q) -> np.ndarray:
    """Column-wise argmax; ties go to the lowest class index."""
    return np.argmax(as_matrix(Q), axis=0).astype(np.int64)
