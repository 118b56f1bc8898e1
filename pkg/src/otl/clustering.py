"""Hard pseudo labels from clustering target features.

Both algorithms work on cosine distance ``1 - f_i . f_j`` over unit-norm rows.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import TooFewSamples
from .numerics import as_matrix

NOISE = -1


@dataclass
class HardLabeling:
    labels: np.ndarray
    k: int
    centroids: np.ndarray
    objective_history: list = field(default_factory=list)

    @property
    def n_noise(self) -> int:
        return int((self.labels == NOISE).sum())


@dataclass(frozen=True)
class GroupSpec:
    mode: str = "kmeans"
    kmeans_k_list: tuple = ()
    dbscan_eps_list: tuple = (0.56, 0.58, 0.60, 0.62, 0.64)
    dbscan_min_pts: int = 4

    def __post_init__(self):
        if self.mode not in ("kmeans", "dbscan"):
            raise ValueError(f"unknown clustering mode {self.mode!r}")
        if self.mode == "dbscan":
            if not self.dbscan_eps_list or min(self.dbscan_eps_list) <= 0:
                raise ValueError("dbscan needs at least one eps > 0")
        elif self.kmeans_k_list and min(self.kmeans_k_list) < 1:
            raise ValueError("every k must be >= 1")

    def k_list_for(self, n: int) -> list[int]:
        if self.kmeans_k_list:
            return [min(int(k), n) for k in self.kmeans_k_list]
        return default_k_list(n)


def default_k_list(n: int) -> list[int]:
    """``N/16, N/8, N/4, N/2`` (each at least 1, at most N, duplicates dropped)."""
    ks = []
    for div in (16, 8, 4, 2):
        k = min(max(n // div, 1), n)
        if k not in ks:
            ks.append(k)
    return ks


def _normalized_means(features, labels, k, previous=None):
    sums = np.zeros((k, features.shape[1]))
    keep = labels >= 0
    np.add.at(sums, labels[keep], features[keep])
    norms = np.linalg.norm(sums, axis=1)
    out = previous.copy() if previous is not None else np.zeros_like(sums)
    ok = norms > 1e-12
    out[ok] = sums[ok] / norms[ok, None]
    return out


def _kmeans_pp(features, k, rng):
    n = features.shape[0]
    centers = [int(rng.integers(n))]
    dist = 1.0 - features @ features[centers[0]]
    for _ in range(1, k):
        weights = np.maximum(dist, 0.0) ** 2
        total = weights.sum()
        if total <= 0:
            # all remaining points coincide with a chosen center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=weights / total))
        centers.append(idx)
        dist = np.minimum(dist, 1.0 - features @ features[idx])
    return features[centers].copy()


def kmeans(features, k: int, seed=0, max_iter: int = 100) -> HardLabeling:
    """Spherical k-means (Lloyd) with k-means++ seeding on cosine distance."""
    f = as_matrix(features)
    n = f.shape[0]
    if k < 1 or n < k:
        raise TooFewSamples(f"k-means with k={k} needs at least k samples, got {n}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(f, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        sim = f @ centroids.T
        new = np.argmax(sim, axis=1)
        new = _repair_empty(f, new, centroids, k)
        history.append(float((1.0 - f @ centroids.T)[np.arange(n), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = _normalized_means(f, labels, k, centroids)
    history.append(float((1.0 - (f * centroids[labels]).sum(axis=1)).sum()))
    return HardLabeling(labels.astype(np.int64), k, centroids, history)


def _repair_empty(f, labels, centroids, k):
    """Give each empty cluster the point farthest from its own centroid."""
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        dist = 1.0 - (f * centroids[labels]).sum(axis=1)
        dist[counts[labels] <= 1] = -np.inf
        idx = int(np.argmax(dist))
        counts[labels[idx]] -= 1
        labels[idx] = c
        counts[c] = 1
        centroids[c] = f[idx]
    return labels


def dbscan(features, eps: float, min_pts: int = 4) -> HardLabeling:
    """DBSCAN on cosine distance; unreachable points get ``NOISE``.

    A point is core when at least ``min_pts`` points (itself included) lie
    within distance ``eps``.
    """
    f = as_matrix(features)
    dist = 1.0 - f @ f.T
    adj = dist <= eps
    indptr = np.concatenate([[0], np.cumsum(adj.sum(axis=1))])
    indices = np.nonzero(adj)[1]
    labels, k = kernels.dbscan_expand(indptr, indices, min_pts)
    centroids = _normalized_means(f, labels, k) if k else np.zeros((0, f.shape[1]))
    return HardLabeling(labels.astype(np.int64), int(k), centroids)


def make_groups(features, spec: GroupSpec, seed=0, max_iter: int = 100) -> list[HardLabeling]:
    """One independent clustering per granularity in ``spec``."""
    f = as_matrix(features)
    if spec.mode == "dbscan":
        return [dbscan(f, eps, spec.dbscan_min_pts) for eps in spec.dbscan_eps_list]
    ks = spec.k_list_for(f.shape[0])
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(len(ks))
    return [kmeans(f, k, seed=s, max_iter=max_iter) for k, s in zip(ks, seeds)]


def export_labelings(path, labelings: list[HardLabeling]) -> None:
    """CSV rows ``sample_index,group_index,label`` (noise is -1)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "group_index", "label"])
        for g, lab in enumerate(labelings):
            for i, y in enumerate(lab.labels):
                w.writerow([i, g, int(y)])
