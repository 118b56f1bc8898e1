"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy versions
are used. Set ``OTL_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("OTL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def get_impl(name: str | None = None):
    """Return a kernel module by name (``"cython"``/``"python"``) or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def _resolve(impl):
    if impl is None:
        return _impl
    return get_impl(impl) if isinstance(impl, str) else impl


def sinkhorn_log(logk, log_w, log_c, tol, marginal_tol, max_iter, impl=None):
    impl = _resolve(impl)
    return impl.sinkhorn_log(
        np.ascontiguousarray(logk, dtype=np.float64),
        np.ascontiguousarray(log_w, dtype=np.float64),
        np.ascontiguousarray(log_c, dtype=np.float64),
        float(tol), float(marginal_tol), int(max_iter),
    )


def batch_hard(sim, labels, impl=None):
    impl = _resolve(impl)
    return impl.batch_hard(
        np.ascontiguousarray(sim, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.int64),
    )


def dbscan_expand(indptr, indices, min_pts, impl=None):
    impl = _resolve(impl)
    return impl.dbscan_expand(
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        int(min_pts),
    )
