"""Synthetic identity datasets with camera and domain shifts, plus CSV I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, ParseError
from .numerics import l2_normalize_rows

SPLITS = ("source", "target_train", "target_query", "target_gallery")


@dataclass
class IdentityDataset:
    inputs: np.ndarray
    ids: np.ndarray
    cams: np.ndarray
    split: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, mask_or_index) -> "IdentityDataset":
        return IdentityDataset(self.inputs[mask_or_index], self.ids[mask_or_index],
                               self.cams[mask_or_index], self.split[mask_or_index])

    def where(self, split: str) -> "IdentityDataset":
        return self.subset(self.split == split)

    @staticmethod
    def concat(parts) -> "IdentityDataset":
        return IdentityDataset(np.concatenate([p.inputs for p in parts]),
                               np.concatenate([p.ids for p in parts]),
                               np.concatenate([p.cams for p in parts]),
                               np.concatenate([p.split for p in parts]))


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian identity blobs seen through per-camera affine maps.

    Target identities are disjoint from source ones and additionally pass
    through a global affine domain shift. ``eval_per_identity`` extra target
    draws per identity form the query/gallery sets (one query per identity
    and camera).

    With ``attribute_groups > 0`` identities share appearance: identity ``i``
    belongs to group ``i % attribute_groups`` (in both domains) and its mean
    direction mixes the group direction with weight ``attribute_share``.
    """

    n_identities: int = 20
    samples_per_identity: int = 30
    n_source_identities: int = 20
    source_samples_per_identity: int = 30
    eval_per_identity: int = 12
    input_dim: int = 32
    cluster_std: float = 0.35
    n_cameras: int = 3
    camera_shift_strength: float = 0.5
    domain_shift_strength: float = 0.6
    attribute_groups: int = 5
    attribute_share: float = 0.4
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_identities, self.samples_per_identity, self.n_source_identities,
                  self.source_samples_per_identity, self.input_dim, self.n_cameras)
        if min(counts) < 1 or self.eval_per_identity < 0:
            raise ValueError("counts must be positive")
        if min(self.cluster_std, self.camera_shift_strength, self.domain_shift_strength) < 0:
            raise ValueError("strengths must be >= 0")
        if self.attribute_groups < 0 or not 0 <= self.attribute_share < 1:
            raise ValueError("attribute_groups must be >= 0 and attribute_share in [0, 1)")


def _affine(rng, dim, strength):
    a = np.eye(dim) + strength * rng.standard_normal((dim, dim)) / np.sqrt(dim)
    b = strength * rng.standard_normal(dim) / np.sqrt(dim)
    return a, b


def _draw(rng, means, per_id, std, cams_affine, id_offset, split):
    n_ids, dim = means.shape
    n_cams = len(cams_affine)
    ids = np.repeat(np.arange(n_ids), per_id)
    cams = np.tile(np.arange(per_id) % n_cams, n_ids)
    x = means[ids] + std * rng.standard_normal((len(ids), dim))
    out = np.empty_like(x)
    for c, (a, b) in enumerate(cams_affine):
        sel = cams == c
        out[sel] = x[sel] @ a.T + b
    return IdentityDataset(out, ids + id_offset, cams, np.full(len(ids), split, dtype=object))


def synth_generate(spec: SynthSpec) -> tuple[IdentityDataset, IdentityDataset]:
    """Return ``(source, target)``; ``target`` holds train, query and gallery splits."""
    rng = np.random.default_rng(spec.seed)
    d = spec.input_dim
    means = rng.standard_normal((spec.n_source_identities + spec.n_identities, d))
    if spec.attribute_groups:
        centers = l2_normalize_rows(rng.standard_normal((spec.attribute_groups, d)))
        owner = np.arange(len(means)) % spec.attribute_groups
        means = (np.sqrt(spec.attribute_share) * centers[owner]
                 + np.sqrt(1 - spec.attribute_share) * l2_normalize_rows(means))
    means = l2_normalize_rows(means) * np.sqrt(d) / 2
    cams = [_affine(rng, d, spec.camera_shift_strength) for _ in range(spec.n_cameras)]
    shift_a, shift_b = _affine(rng, d, spec.domain_shift_strength)
    src_means = means[: spec.n_source_identities]
    tgt_means = means[spec.n_source_identities:]
    source = _draw(rng, src_means, spec.source_samples_per_identity, spec.cluster_std,
                   cams, 0, "source")
    train = _draw(rng, tgt_means, spec.samples_per_identity, spec.cluster_std, cams,
                  spec.n_source_identities, "target_train")
    parts = [train]
    if spec.eval_per_identity:
        ev = _draw(rng, tgt_means, spec.eval_per_identity, spec.cluster_std, cams,
                   spec.n_source_identities, "target_gallery")
        first = np.zeros(len(ev), dtype=bool)
        seen = set()
        for i, key in enumerate(zip(ev.ids, ev.cams)):
            if key not in seen:
                seen.add(key)
                first[i] = True
        ev.split[first] = "target_query"
        parts.append(ev)
    target = IdentityDataset.concat(parts)
    target.inputs = target.inputs @ shift_a.T + shift_b
    return source, target


def export_embeddings(path, ds: IdentityDataset) -> None:
    """Write ``id,camera,split,f0..f{D-1}`` CSV."""
    dim = ds.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "camera", "split"] + [f"f{j}" for j in range(dim)])
        for x, i, c, s in zip(ds.inputs, ds.ids, ds.cams, ds.split):
            w.writerow([int(i), int(c), s] + [repr(float(v)) for v in x])


def ingest_embeddings(path, normalize: bool = True) -> IdentityDataset:
    """Read the embedding CSV; features are L2-normalized unless ``normalize=False``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(1, "empty file")
    header = rows[0]
    if header[:3] != ["id", "camera", "split"] or len(header) < 4:
        raise ParseError(1, "header must be id,camera,split,f0..f{D-1}")
    dim = len(header) - 3
    if header[3:] != [f"f{j}" for j in range(dim)]:
        raise DimMismatch("feature columns must be f0..f{D-1} in order")
    feats, ids, cams, splits = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != dim + 3:
            raise ParseError(lineno, f"expected {dim + 3} columns, got {len(row)}")
        try:
            ids.append(int(row[0]))
            cams.append(int(row[1]))
            feats.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if row[2] not in SPLITS:
            raise ParseError(lineno, f"unknown split {row[2]!r}")
        splits.append(row[2])
    x = np.array(feats, dtype=np.float64).reshape(-1, dim)
    if normalize and len(x):
        x = l2_normalize_rows(x)
    return IdentityDataset(x, np.array(ids, dtype=np.int64), np.array(cams, dtype=np.int64),
                           np.array(splits, dtype=object))
