"""FIFO queue of target feature snapshots for the weighted contrastive loss."""
from __future__ import annotations

import numpy as np

from .errors import EntryTooLarge, ShapeMismatch
from .losses import PairSplit
from .numerics import as_matrix


class MemoryBank:
    """Fixed-capacity queue of ``(feature, labels per group, instance id)`` rows.

    Rows are kept oldest first. Enqueuing a batch evicts the oldest rows so
    the size never exceeds ``capacity``.
    """

    def __init__(self, capacity: int, dim: int, n_groups: int = 1):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self.n_groups = n_groups
        self.features = np.zeros((0, dim))
        self.labels = np.zeros((0, n_groups), dtype=np.int64)
        self.ids = np.zeros(0, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.ids)

    def enqueue(self, features, labels, ids) -> "MemoryBank":
        features = as_matrix(features)
        labels = np.asarray(labels, dtype=np.int64).reshape(len(features), -1)
        ids = np.asarray(ids, dtype=np.int64).ravel()
        if features.shape[1] != self.dim or labels.shape[1] != self.n_groups or len(ids) != len(features):
            raise ShapeMismatch("malformed bank entries")
        if len(features) > self.capacity:
            raise EntryTooLarge(f"batch of {len(features)} exceeds capacity {self.capacity}")
        keep = max(0, len(self) + len(features) - self.capacity)
        self.features = np.concatenate([self.features[keep:], features])
        self.labels = np.concatenate([self.labels[keep:], labels])
        self.ids = np.concatenate([self.ids[keep:], ids])
        return self

    def relabel(self, labels_by_id: np.ndarray) -> None:
        """Replace stored pseudo labels with ``labels_by_id[instance_id]`` (N x groups)."""
        if len(self):
            self.labels = np.asarray(labels_by_id, dtype=np.int64).reshape(-1, self.n_groups)[self.ids]

    def masks(self, anchor_label: int, anchor_id: int, group: int = 0):
        """Boolean positive/negative masks over the bank for one anchor."""
        other = self.ids != anchor_id
        same = self.labels[:, group] == anchor_label
        return other & same, other & ~same

    def split_pairs(self, anchor_feature, anchor_labels, anchor_id: int, group: int = 0) -> PairSplit:
        """Cosine similarities to same-label (positive) and other-label (negative) entries.

        Entries sharing ``anchor_id`` are skipped.
        """
        if not 0 <= group < self.n_groups:
            raise IndexError(f"group {group} out of range")
        a = np.asarray(anchor_feature, dtype=np.float64).ravel()
        label = int(np.atleast_1d(anchor_labels)[group])
        pos, neg = self.masks(label, anchor_id, group)
        norms = np.linalg.norm(self.features, axis=1) * np.linalg.norm(a)
        sims = (self.features @ a) / np.where(norms > 0, norms, 1.0)
        return PairSplit(sims[pos], sims[neg])
