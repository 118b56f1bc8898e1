"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from otl import kernels


def _cases(rng):
    k, n = 40, 600
    logits = rng.standard_normal((k, n)) * 3
    log_p = logits - np.log(np.exp(logits).sum(axis=0)) - np.log(n)
    sink = (2.0 * log_p, np.full(k, -np.log(k)), np.full(n, -np.log(n)), 0.1, 1e-6, 50000)

    f = rng.standard_normal((64, 32))
    f /= np.linalg.norm(f, axis=1, keepdims=True)
    hard = (f @ f.T, rng.integers(0, 16, 64))

    g = rng.standard_normal((600, 16))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    adj = (1.0 - g @ g.T) <= 0.4
    db = (np.concatenate([[0], np.cumsum(adj.sum(axis=1))]), np.nonzero(adj)[1], 4)
    small = rng.dirichlet(np.ones(8), size=64).T / 64
    sink_small = (25.0 * np.log(small), np.full(8, -np.log(8)), np.full(64, -np.log(64)), 0.1, 1e-6, 400000)
    return {"sinkhorn_log 8x64": ("sinkhorn_log", sink_small),
            "sinkhorn_log 40x600": ("sinkhorn_log", sink),
            "batch_hard B=64": ("batch_hard", hard),
            "dbscan_expand N=600": ("dbscan_expand", db)}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    try:
        impls = {"python": kernels.get_impl("python"), "cython": kernels.get_impl("cython")}
    except ImportError:
        print("compiled extension not built; only the python backend is available")
        return 1
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':<22}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for label, (name, call_args) in cases.items():
        ms = {}
        for backend, impl in impls.items():
            fn = getattr(kernels, name)
            number = 3 if backend == "python" else 20
            best = min(timeit.repeat(lambda: fn(*call_args, impl=impl), number=number, repeat=args.repeat))
            ms[backend] = 1000 * best / number
        print(f"{label:<22}{ms['python']:>12.3f}{ms['cython']:>12.3f}{ms['python'] / ms['cython']:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
