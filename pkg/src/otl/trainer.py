"""Source pre-training and the alternating adapt/refine loop on target data.

One adaptation epoch trains ``iters_per_epoch`` steps on PK batches drawn
with the current hard pseudo labels, then (when enabled) re-extracts all
target features and re-solves the transport problem of every group to
replace its soft labels. Every ``recluster_every`` epochs the groups are
re-clustered from scratch and the prototypes reset to the cluster means
(``recluster_every = 0`` clusters only once, before the first epoch).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import prototypes as protos
from .clustering import NOISE, make_groups
from .config import TrainConfig
from .data import IdentityDataset
from .errors import InsufficientData, NotConverged, TooFewIdentities
from .label_transfer import harden, marginal_error, refine, uniform_polytope
from .losses import group_ce, source_supervised_loss, total_loss, triplet_batch_hard, wcl_batch
from .memory_bank import MemoryBank
from .metrics import cluster_metrics, cmc, mean_ap

log = logging.getLogger(__name__)


def pk_sample(labels, p: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``p`` distinct identities, ``k`` indices each (with replacement only when short)."""
    labels = np.asarray(labels)
    ids = np.unique(labels[labels != NOISE])
    if len(ids) < p:
        raise TooFewIdentities(f"need {p} identities, have {len(ids)}")
    chosen = rng.choice(ids, size=p, replace=False)
    out = []
    for y in chosen:
        members = np.flatnonzero(labels == y)
        out.append(rng.choice(members, size=k, replace=len(members) < k))
    return np.concatenate(out)


class _Optim:
    """Adam or SGD over a list of arrays with a mutable learning rate."""

    def __init__(self, kind: str, lr: float):
        self.kind = kind
        self.adam = enc.Adam(lr=lr) if kind == "adam" else None
        self.lr = lr

    def step(self, params: list, grads: list) -> list:
        if self.adam is not None:
            self.adam.lr = self.lr
            return self.adam.step(params, grads)
        return [p - self.lr * g for p, g in zip(params, grads)]


def _source_head(n_classes: int, dim: int, rng) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_classes + dim))
    return rng.uniform(-limit, limit, size=(n_classes, dim))


def _source_step(params, head, opt, src: IdentityDataset, src_labels, cfg, rng):
    """Gradients of the supervised source loss on one PK batch."""
    idx = pk_sample(src_labels, cfg.batch_p, cfg.batch_k, rng)
    feats, tape = enc.forward(params, src.inputs[idx])
    logits = feats @ head.T
    loss, g_feat, g_logits = source_supervised_loss(feats, logits, src_labels[idx], cfg.triplet_margin)
    g_feat = g_feat + g_logits @ head
    g_head = g_logits.T @ feats
    return loss, enc.backward(params, tape, g_feat), g_head


def pretrain_source(source: IdentityDataset, cfg: TrainConfig, params: enc.EncoderParams | None = None,
                    input_dim: int | None = None):
    """Supervised pre-training on labeled source data.

    Returns ``(params, head, losses)``. The learning rate is multiplied by
    ``lr_gamma`` every ``lr_step`` epochs.
    """
    _, counts = np.unique(source.ids, return_counts=True)
    if len(counts) < max(cfg.batch_p, 2) or (counts < 2).any():
        raise InsufficientData("source needs >= batch_p identities with >= 2 samples each")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    dim_in = input_dim or source.inputs.shape[1]
    if params is None:
        params = enc.init_params([dim_in, cfg.hidden_dim, cfg.embed_dim], seed=cfg.seed)
    _, src_labels = np.unique(source.ids, return_inverse=True)
    head = _source_head(len(counts), cfg.embed_dim, rng)
    opt = _Optim(cfg.optimizer, cfg.lr)
    losses = []
    for epoch in range(cfg.epochs_pretrain):
        opt.lr = cfg.lr * cfg.lr_gamma ** (epoch // cfg.lr_step) if cfg.lr_step else cfg.lr
        for _ in range(cfg.pretrain_iters_per_epoch):
            loss, g_params, g_head = _source_step(params, head, opt, source, src_labels, cfg, rng)
            new = opt.step(params.arrays() + [head], g_params.arrays() + [g_head])
            params, head = enc.EncoderParams.from_arrays(new[:-1]), new[-1]
            losses.append(loss)
    return params, head, losses


@dataclass
class AdaptState:
    params: enc.EncoderParams
    groups: list
    Q: list
    bank: MemoryBank
    hard: np.ndarray
    epoch: int = 0
    iteration: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    head: np.ndarray | None = None
    sinkhorn_log: list = field(default_factory=list)


def _init_groups(feats, cfg: TrainConfig, seed):
    """Cluster ``feats`` into every granularity; prototypes = cluster means, Q = one-hot / N."""
    labelings = make_groups(feats, cfg.group_spec(), seed=seed, max_iter=cfg.kmeans_max_iter)
    n = feats.shape[0]
    groups, Q, hard = [], [], []
    for m, lab in enumerate(labelings):
        k = max(lab.k, 1)
        group = protos.from_labels(feats, lab.labels, k, cfg.tau, cfg.prototype_mode, m,
                                   fallback=lab.centroids if lab.k else None)
        q = np.zeros((k, n))
        valid = lab.labels != NOISE
        q[lab.labels[valid], np.flatnonzero(valid)] = 1.0 / n
        groups.append(group)
        Q.append(q)
        hard.append(lab.labels)
    return groups, Q, np.stack(hard, axis=1)


def _refine_groups(state: AdaptState, feats, cfg: TrainConfig):
    """Replace every group's soft labels with its refined transport plan.

    Noise samples (no current label in that group) are left out and keep
    their previous labels.
    """
    n = feats.shape[0]
    sk_cfg = cfg.sinkhorn_config()
    for m, group in enumerate(state.groups):
        valid = state.hard[:, m] != NOISE
        nv = int(valid.sum())
        if nv == 0:
            continue
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NotConverged)
            res = refine(feats[valid], group.C, group.tau, uniform_polytope(group.k, nv), sk_cfg)
        for w in caught:
            log.warning("group %d: %s", m, w.message)
        # soft labels are the per-sample conditionals, i.e. the plan's columns renormalized
        q = np.zeros((group.k, n))
        q[:, valid] = res.Q / res.Q.sum(axis=0, keepdims=True) / n
        state.Q[m] = q
        state.hard[valid, m] = harden(res.Q)
        if group.mode == protos.NONPARAMETRIC:
            state.groups[m] = protos.update_nonparametric(group, feats, state.hard[:, m])
        state.sinkhorn_log.append({"epoch": state.epoch, "group": m, "iters": res.iters,
                                   "converged": res.converged,
                                   "marginal_err": marginal_error(res.Q, uniform_polytope(group.k, nv))})


def evaluate(params: enc.EncoderParams, target: IdentityDataset, pseudo_labels=None) -> dict:
    """Retrieval metrics on target query/gallery and clustering metrics of ``pseudo_labels``."""
    out = {}
    q = target.where("target_query")
    g = target.where("target_gallery")
    if len(q) and len(g):
        qf, gf = enc.encode(params, q.inputs), enc.encode(params, g.inputs)
        out["map"] = mean_ap(qf, q.ids, q.cams, gf, g.ids, g.cams)
        ranks = cmc(qf, q.ids, q.cams, gf, g.ids, g.cams, ranks=(1, 5, 10))
        out.update(top1=ranks[1], top5=ranks[5], top10=ranks[10])
    if pseudo_labels is not None:
        train = target.where("target_train")
        out.update(cluster_metrics(pseudo_labels, train.ids))
    return out


def _target_step(state: AdaptState, x_train, cfg: TrainConfig):
    """Loss parts and gradients of the target objective on one PK batch."""
    n = x_train.shape[0]
    w = cfg.loss_weights()
    idx = pk_sample(state.hard[:, 0], cfg.batch_p, cfg.batch_k, state.rng)
    feats, tape = enc.forward(state.params, x_train[idx])
    parts = {}
    l_tri, g_feat = triplet_batch_hard(feats, state.hard[idx, 0], w.triplet_margin)
    parts["l_tri"] = l_tri
    g_feat = w.tri * g_feat
    g_cs = [np.zeros_like(gr.C) for gr in state.groups]
    parts["l_g"] = 0.0
    if w.g > 0:
        for m, group in enumerate(state.groups):
            # samples that are clustering noise in this group carry no soft label
            valid = state.hard[idx, m] != NOISE
            if not valid.any():
                continue
            l_g, gf, (gc,) = group_ce([group], feats[valid], [state.Q[m][:, idx[valid]] * n])
            parts["l_g"] += l_g
            g_feat[valid] += w.g * gf
            g_cs[m] = w.g * gc
    parts["l_wcl"] = 0.0
    if cfg.use_bank and w.wcl > 0 and len(state.bank):
        masks = [state.bank.masks(state.hard[i, cfg.bank_group], i, cfg.bank_group) for i in idx]
        l_wcl, gw = wcl_batch(feats, state.bank.features, masks, w.wcl_margin, w.wcl_scale)
        parts["l_wcl"] = l_wcl
        g_feat = g_feat + w.wcl * gw
    parts["total"] = total_loss(parts, w)
    grads = enc.backward(state.params, tape, g_feat)
    if cfg.use_bank:
        state.bank.enqueue(feats, state.hard[idx], idx)
    return parts, grads, g_cs


def adapt(source: IdentityDataset | None, target: IdentityDataset, cfg: TrainConfig,
          params: enc.EncoderParams | None = None, head=None):
    """Run the full adaptation loop.

    Pre-trains on ``source`` first when ``params`` is not given. Returns
    ``(state, history, loss_log)`` where ``history`` has one metrics dict per
    epoch (epoch 0 is the state right after the initial clustering).
    """
    if params is None:
        if source is None:
            raise InsufficientData("no encoder given and no source data to pre-train on")
        params, head, _ = pretrain_source(source, cfg)
    train = target.where("target_train")
    x = train.inputs
    n = x.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    feats = enc.encode(params, x)
    groups, Q, hard = _init_groups(feats, cfg, seed=np.random.SeedSequence([cfg.seed, 3, 0]))
    bank = MemoryBank(cfg.capacity, cfg.embed_dim, len(groups))
    state = AdaptState(params, groups, Q, bank, hard, rng=rng, head=head)

    use_source = source is not None and cfg.source_mode != "off" and head is not None
    if use_source:
        _, src_labels = np.unique(source.ids, return_inverse=True)
    enc_opt = _Optim(cfg.optimizer, cfg.adapt_lr)
    head_opt = _Optim(cfg.optimizer, cfg.adapt_lr)
    proto_opts = [_Optim(cfg.optimizer, cfg.adapt_lr) for _ in groups]

    history = [{"epoch": 0, **evaluate(params, target, hard[:, 0])}]
    loss_log = []
    for epoch in range(1, cfg.adapt_epochs + 1):
        state.epoch = epoch
        if cfg.recluster_every and epoch > 1 and (epoch - 1) % cfg.recluster_every == 0:
            feats = enc.encode(state.params, x)
            seed = np.random.SeedSequence([cfg.seed, 3, epoch])
            state.groups, state.Q, state.hard = _init_groups(feats, cfg, seed)
            state.bank.relabel(state.hard)
            proto_opts = [_Optim(cfg.optimizer, cfg.adapt_lr) for _ in state.groups]
        sums = {"l_tri": 0.0, "l_g": 0.0, "l_wcl": 0.0, "total": 0.0}
        for it in range(cfg.iters_per_epoch):
            if use_source and cfg.source_mode == "alternate":
                _, gp, gh = _source_step(state.params, state.head, head_opt, source, src_labels, cfg, state.rng)
                new = enc_opt.step(state.params.arrays(), gp.arrays())
                state.params = enc.EncoderParams.from_arrays(new)
                state.head = head_opt.step([state.head], [gh])[0]
            parts, grads, g_cs = _target_step(state, x, cfg)
            if use_source and cfg.source_mode == "joint":
                _, gp, gh = _source_step(state.params, state.head, head_opt, source, src_labels, cfg, state.rng)
                grads = grads.map(lambda a, b: a + b, gp)
                state.head = head_opt.step([state.head], [gh])[0]
            state.params = enc.EncoderParams.from_arrays(enc_opt.step(state.params.arrays(), grads.arrays()))
            for m, group in enumerate(state.groups):
                if group.mode == protos.PARAMETRIC:
                    (new_c,) = proto_opts[m].step([group.C], [g_cs[m]])
                    state.groups[m] = protos.PrototypeGroup(
                        protos.l2_normalize_rows(new_c), group.tau, group.mode, group.group_id)
            state.iteration += 1
            loss_log.append({"epoch": epoch, "iter": state.iteration, **parts})
            for key in sums:
                sums[key] += parts[key]
            if cfg.refine and state.iteration % cfg.refresh_iters == 0:
                _refine_groups(state, enc.encode(state.params, x), cfg)
                state.bank.relabel(state.hard)
        row = {"epoch": epoch}
        row.update({k: v / max(cfg.iters_per_epoch, 1) for k, v in sums.items()})
        row.update(evaluate(state.params, target, state.hard[:, 0]))
        history.append(row)
        log.info("epoch %d: %s", epoch, row)
    return state, history, loss_log
