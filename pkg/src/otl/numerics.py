"""Dense kernels shared by the rest of the package.

Matrices and vectors are plain ``float64`` numpy arrays. Everything here is a
pure function of its inputs.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import NonPositiveTemperature, ShapeMismatch, ZeroRow, ZeroVector

ZERO_NORM = 1e-30


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got ndim={a.ndim}")
    return a


def l2_normalize_rows(m) -> np.ndarray:
    """Scale every row to unit Euclidean norm.

    Raises ZeroRow for the first row whose norm is below 1e-30.
    """
    a = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroRow(int(bad[0]))
    return a / norms[:, None]


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < ZERO_NORM or nb < ZERO_NORM:
        raise ZeroVector("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def softmax_temp(logits, tau: float, axis: int = -1) -> np.ndarray:
    """Temperature softmax ``exp(l/tau) / sum exp(l/tau)`` along ``axis``."""
    if not tau > 0:
        raise NonPositiveTemperature(f"tau must be > 0, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_temp(logits, tau: float, axis: int = -1) -> np.ndarray:
    if not tau > 0:
        raise NonPositiveTemperature(f"tau must be > 0, got {tau}")
    z = np.asarray(logits, dtype=np.float64) / tau
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def entropy(q) -> float:
    """Shannon entropy ``-sum q log q`` with ``0 log 0 = 0``."""
    q = np.asarray(q, dtype=np.float64)
    nz = q[q > 0]
    return float(-(nz * np.log(nz)).sum())


def read_matrix_csv(path) -> np.ndarray:
    """Read a headerless CSV of floats, one row per line."""
    text = Path(path).read_text()
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise ShapeMismatch(f"{path}: empty matrix file")
    return as_matrix(np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",", ndmin=2))


def write_matrix_csv(path, m) -> None:
    a = as_matrix(m)
    with open(path, "w") as fh:
        for row in a:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
