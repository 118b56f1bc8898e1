"""Training objectives with analytic gradients.

All feature inputs are assumed L2-normalized, so a pairwise cosine similarity
is the plain dot product and gradients are taken with respect to the
normalized features. The encoder's backward pass supplies the normalization
Jacobian.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeMismatch
from .numerics import as_matrix
from .prototypes import PrototypeGroup, grad_parametric


@dataclass(frozen=True)
class LossWeights:
    tri: float = 1.0
    g: float = 1.0
    wcl: float = 0.05
    triplet_margin: float = 0.3
    wcl_margin: float = 0.3
    wcl_scale: float = 32.0

    def __post_init__(self):
        if min(self.tri, self.g, self.wcl) < 0:
            raise ValueError("loss weights must be >= 0")
        if not self.wcl_scale > 0:
            raise ValueError("wcl_scale must be > 0")


@dataclass
class PairSplit:
    pos: np.ndarray
    neg: np.ndarray


def group_ce(groups: list[PrototypeGroup], features, Q_groups):
    """Multi-group soft cross-entropy summed over groups.

    Returns ``(loss, grad_features, [grad_C per group])``.
    """
    features = as_matrix(features)
    if len(groups) != len(Q_groups):
        raise ShapeMismatch("one soft-label matrix per group required")
    total = 0.0
    grad_f = np.zeros_like(features)
    grad_cs = []
    for group, Q in zip(groups, Q_groups):
        loss, g_c, g_f = grad_parametric(group, features, Q)
        total += loss
        grad_f += g_f
        grad_cs.append(g_c)
    return total, grad_f, grad_cs


def triplet_batch_hard(features, labels, margin: float = 0.3):
    """Batch-hard triplet loss in similarity space.

    For each anchor the hardest positive is the *least* similar same-label
    sample and the hardest negative the *most* similar other-label sample;
    the loss is the mean of ``max(0, s_n - s_p + margin)`` over anchors that
    have both. Returns ``(loss, grad_features)``.
    """
    f = as_matrix(features)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != f.shape[0]:
        raise ShapeMismatch("one label per feature required")
    sim = f @ f.T
    pos, neg = kernels.batch_hard(sim, labels)
    grad = np.zeros_like(f)
    anchors = np.flatnonzero((pos >= 0) & (neg >= 0))
    if anchors.size == 0:
        return 0.0, grad
    sp = sim[anchors, pos[anchors]]
    sn = sim[anchors, neg[anchors]]
    hinge = sn - sp + margin
    active = hinge > 0
    loss = float(np.where(active, hinge, 0.0).sum() / anchors.size)
    scale = 1.0 / anchors.size
    for a, p, n in zip(anchors[active], pos[anchors[active]], neg[anchors[active]]):
        grad[a] += scale * (f[n] - f[p])
        grad[n] += scale * f[a]
        grad[p] -= scale * f[a]
    return loss, grad


def weighted_contrastive(split: PairSplit, margin: float = 0.3, scale: float = 32.0):
    """Circle-style weighted contrastive loss of one anchor.

    ``L = log(1 + sum_j exp(g an_j (sn_j - m)) * sum_k exp(-g ap_k (sp_k - 1 + m)))``
    with ``an = [m + sn]_+`` and ``ap = [1 + m - sp]_+`` held constant under
    differentiation. Returns ``(loss, grad_pos, grad_neg)``; an empty side
    gives zero loss.
    """
    sp = np.asarray(split.pos, dtype=np.float64).ravel()
    sn = np.asarray(split.neg, dtype=np.float64).ravel()
    if sp.size == 0 or sn.size == 0:
        return 0.0, np.zeros_like(sp), np.zeros_like(sn)
    ap = np.maximum(1.0 + margin - sp, 0.0)
    an = np.maximum(margin + sn, 0.0)
    logit_p = -scale * ap * (sp - 1.0 + margin)
    logit_n = scale * an * (sn - margin)
    mp, mn = logit_p.max(), logit_n.max()
    ep, en = np.exp(logit_p - mp), np.exp(logit_n - mn)
    z = mp + mn + np.log(ep.sum()) + np.log(en.sum())
    loss = float(np.logaddexp(0.0, z))
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    grad_p = sig * (ep / ep.sum()) * (-scale * ap)
    grad_n = sig * (en / en.sum()) * (scale * an)
    return loss, grad_p, grad_n


def wcl_batch(features, bank_feats, masks, margin: float = 0.3, scale: float = 32.0):
    """Mean weighted contrastive loss of a batch of anchors against bank snapshots.

    ``masks[i]`` is a ``(pos_mask, neg_mask)`` pair of boolean arrays over the
    bank for anchor ``i``. Bank features are constants; only the anchors
    receive gradient.
    """
    f = as_matrix(features)
    grad = np.zeros_like(f)
    if len(bank_feats) == 0:
        return 0.0, grad
    sims = f @ bank_feats.T
    total = 0.0
    for i, (pos_mask, neg_mask) in enumerate(masks):
        loss, gp, gn = weighted_contrastive(PairSplit(sims[i, pos_mask], sims[i, neg_mask]),
                                            margin, scale)
        total += loss
        grad[i] = gp @ bank_feats[pos_mask] + gn @ bank_feats[neg_mask]
    b = f.shape[0]
    return total / b, grad / b


def total_loss(parts: dict, weights: LossWeights) -> float:
    """``w_tri * L_tri + w_g * L_G + w_wcl * L_WCL``."""
    return (weights.tri * parts.get("l_tri", 0.0)
            + weights.g * parts.get("l_g", 0.0)
            + weights.wcl * parts.get("l_wcl", 0.0))


def cross_entropy(logits, labels):
    """Mean hard-label cross-entropy. Returns ``(loss, grad_logits)``."""
    z = as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != z.shape[0]:
        raise ShapeMismatch("one label per row of logits required")
    if (labels < 0).any() or (labels >= z.shape[1]).any():
        raise ValueError("label out of range")
    z = z - z.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    b = z.shape[0]
    rows = np.arange(b)
    loss = float(-log_p[rows, labels].mean())
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return loss, grad / b


def source_supervised_loss(features, logits, labels, margin: float = 0.3):
    """Hard-label cross-entropy on a source head plus batch-hard triplet, equally weighted.

    Returns ``(loss, grad_features, grad_logits)``.
    """
    ce, g_logits = cross_entropy(logits, labels)
    tri, g_feat = triplet_batch_hard(features, labels, margin)
    return ce + tri, g_feat, g_logits
