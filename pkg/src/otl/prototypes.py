"""Per-group prototype classifiers.

Each group ``m`` holds ``K_m`` unit-norm prototype rows; the class posterior of
a feature is a temperature softmax over its cosine similarities to them.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NotADistribution, ShapeMismatch
from .numerics import as_matrix, l2_normalize_rows, softmax_temp

NONPARAMETRIC = "nonparametric"
PARAMETRIC = "parametric"


@dataclass(frozen=True)
class PrototypeGroup:
    C: np.ndarray
    tau: float = 0.05
    mode: str = PARAMETRIC
    group_id: int = 0

    def __post_init__(self):
        C = as_matrix(self.C)
        if C.shape[0] < 1:
            raise ValueError("a prototype group needs at least one prototype")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.mode not in (NONPARAMETRIC, PARAMETRIC):
            raise ValueError(f"unknown prototype mode {self.mode!r}")
        object.__setattr__(self, "C", C)

    @property
    def k(self) -> int:
        return self.C.shape[0]

    @property
    def dim(self) -> int:
        return self.C.shape[1]


def _check_dim(group: PrototypeGroup, features: np.ndarray) -> None:
    if features.shape[1] != group.dim:
        raise ShapeMismatch(f"features have dim {features.shape[1]}, prototypes {group.dim}")


def probs(group: PrototypeGroup, features) -> np.ndarray:
    """K x N matrix whose column ``i`` is ``softmax(C f_i / tau)``."""
    features = as_matrix(features)
    _check_dim(group, features)
    return softmax_temp(group.C @ features.T, group.tau, axis=0)


def update_nonparametric(group: PrototypeGroup, features, hard_labels) -> PrototypeGroup:
    """Reset each prototype to the normalized mean of its class; empty classes keep theirs."""
    features = as_matrix(features)
    _check_dim(group, features)
    labels = np.asarray(hard_labels, dtype=np.int64)
    if labels.shape[0] != features.shape[0]:
        raise ShapeMismatch("one label per feature required")
    if (labels >= group.k).any():
        raise ValueError("label out of range for this group")
    C = group.C.copy()
    keep = labels >= 0
    sums = np.zeros_like(C)
    np.add.at(sums, labels[keep], features[keep])
    counts = np.bincount(labels[keep], minlength=group.k)
    norms = np.linalg.norm(sums, axis=1)
    filled = (counts > 0) & (norms > 1e-12)
    C[filled] = sums[filled] / norms[filled, None]
    return replace(group, C=C)


def from_labels(features, hard_labels, k: int, tau: float, mode: str = PARAMETRIC,
                group_id: int = 0, fallback=None) -> PrototypeGroup:
    """Build a group from cluster means; ``fallback`` rows seed empty clusters."""
    features = as_matrix(features)
    init = fallback if fallback is not None else np.tile(features[:1], (k, 1))
    group = PrototypeGroup(l2_normalize_rows(init), tau, mode, group_id)
    return update_nonparametric(group, features, hard_labels)


def check_distributions(Q_cols, atol: float = 1e-6) -> np.ndarray:
    Q_cols = as_matrix(Q_cols)
    if (Q_cols < -atol).any() or not np.allclose(Q_cols.sum(axis=0), 1.0, atol=atol):
        raise NotADistribution("each column of the soft labels must be a probability distribution")
    return Q_cols


def grad_parametric(group: PrototypeGroup, features, Q_cols):
    """Soft cross-entropy of one group and its gradients.

    ``L = -(1/N) sum_i sum_k q[k,i] log p[k,i]`` with ``p = probs(group, features)``.
    Returns ``(loss, grad_C, grad_features)``.
    """
    features = as_matrix(features)
    _check_dim(group, features)
    Q_cols = check_distributions(Q_cols)
    n = features.shape[0]
    if Q_cols.shape != (group.k, n):
        raise ShapeMismatch(f"soft labels are {Q_cols.shape}, expected {(group.k, n)}")
    logits = group.C @ features.T / group.tau
    logits = logits - logits.max(axis=0, keepdims=True)
    log_p = logits - np.log(np.exp(logits).sum(axis=0, keepdims=True))
    p = np.exp(log_p)
    loss = float(-(Q_cols * log_p).sum() / n)
    delta = (p - Q_cols) / (n * group.tau)
    return loss, delta @ features, delta.T @ group.C


def sgd_prototypes(group: PrototypeGroup, grad_C, lr: float) -> PrototypeGroup:
    """Gradient step on the prototypes followed by row re-normalization."""
    if group.mode != PARAMETRIC:
        return group
    return replace(group, C=l2_normalize_rows(group.C - lr * np.asarray(grad_C)))
