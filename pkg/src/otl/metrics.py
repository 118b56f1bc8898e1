"""Retrieval (mAP, CMC) and clustering (NMI, ARI, purity, noise rate) metrics."""
from __future__ import annotations

import numpy as np

from .errors import LengthMismatch, NoValidQueries
from .numerics import as_matrix


def _ranked_matches(qf, qids, qcams, gf, gids, gcams):
    """Yield, per valid query, the boolean match vector over the ranked gallery.

    Gallery entries with the query's identity *and* camera are dropped. Ties
    in similarity keep gallery order.
    """
    sims = as_matrix(qf) @ as_matrix(gf).T
    gids = np.asarray(gids)
    gcams = np.asarray(gcams)
    for i in range(sims.shape[0]):
        order = np.argsort(-sims[i], kind="stable")
        junk = (gids[order] == qids[i]) & (gcams[order] == qcams[i])
        matches = (gids[order] == qids[i])[~junk]
        if matches.any():
            yield matches


def mean_ap(query_feats, query_ids, query_cams, gallery_feats, gallery_ids, gallery_cams) -> float:
    aps = []
    for matches in _ranked_matches(query_feats, np.asarray(query_ids), np.asarray(query_cams),
                                   gallery_feats, gallery_ids, gallery_cams):
        hits = np.flatnonzero(matches)
        aps.append(np.mean(np.arange(1, len(hits) + 1) / (hits + 1)))
    if not aps:
        raise NoValidQueries("no query has a valid gallery match")
    return float(np.mean(aps))


def cmc(query_feats, query_ids, query_cams, gallery_feats, gallery_ids, gallery_cams,
        ranks=(1, 5, 10)) -> dict:
    first = [int(np.argmax(m)) for m in _ranked_matches(
        query_feats, np.asarray(query_ids), np.asarray(query_cams),
        gallery_feats, gallery_ids, gallery_cams)]
    if not first:
        raise NoValidQueries("no query has a valid gallery match")
    first = np.asarray(first)
    return {r: float(np.mean(first < r)) for r in ranks}


def _contingency(pred, true):
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(true, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def _comb2(x):
    return x * (x - 1) / 2.0


def cluster_metrics(pred_labels, true_labels) -> dict:
    """NMI (arithmetic normalization), ARI, purity and pseudo-label noise rate.

    Predicted ``-1`` labels (clustering noise) are scored as singleton
    clusters and always count as mislabeled in ``noise_rate``.
    """
    pred = np.asarray(pred_labels).ravel()
    true = np.asarray(true_labels).ravel()
    if pred.shape != true.shape:
        raise LengthMismatch(f"{pred.shape[0]} predictions for {true.shape[0]} labels")
    n = len(pred)
    if n == 0:
        raise LengthMismatch("empty labelings")
    noise = pred == -1
    scored = pred.astype(np.int64).copy()
    if noise.any():
        scored[noise] = scored.max() + 1 + np.arange(noise.sum())
    table = _contingency(scored, true)
    rows, cols = table.sum(axis=1), table.sum(axis=0)

    h_pred, h_true = _entropy(rows), _entropy(cols)
    nz = table > 0
    outer = np.outer(rows, cols)
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    denom = (h_pred + h_true) / 2
    nmi = 1.0 if denom == 0 else max(0.0, min(1.0, mi / denom))

    sum_comb = _comb2(table).sum()
    a, b = _comb2(rows).sum(), _comb2(cols).sum()
    expected = a * b / _comb2(n) if n > 1 else 0.0
    max_index = (a + b) / 2
    ari = 1.0 if max_index == expected else float((sum_comb - expected) / (max_index - expected))

    majority = table.max(axis=1)
    purity = float(majority.sum() / n)
    correct = table.argmax(axis=1)
    _, p_inv = np.unique(scored, return_inverse=True)
    _, t_inv = np.unique(true, return_inverse=True)
    wrong = (correct[p_inv] != t_inv) | noise
    return {"nmi": float(nmi), "ari": ari, "purity": purity, "noise_rate": float(wrong.mean())}
