
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from otl.clustering import kmeans
from otl.data import SynthSpec, export_embeddings, ingest_embeddings, synth_generate
from otl.errors import DimMismatch, LengthMismatch, NoValidQueries, ParseError
from otl.metrics import cluster_metrics, cmc, mean_ap
from otl.numerics import l2_normalize_rows


def test_synth_deterministic():
    a, b = synth_generate(SynthSpec(seed=3)), synth_generate(SynthSpec(seed=3))
    for x, y in zip(a, b):
        assert_array_equal(x.inputs, y.inputs)
        assert_array_equal(x.ids, y.ids)
        assert_array_equal(x.split, y.split)
    assert not np.array_equal(a[0].inputs, synth_generate(SynthSpec(seed=4))[0].inputs)


def test_synth_layout():
    spec = SynthSpec(n_identities=5, samples_per_identity=6, n_source_identities=4, eval_per_identity=3)
    source, target = synth_generate(spec)
    assert len(source) == 4 * 30
    assert set(source.ids).isdisjoint(set(target.ids))
    assert len(target.where("target_train")) == 30
    q, g = target.where("target_query"), target.where("target_gallery")
    assert len(q) + len(g) == 15
    assert len(set(zip(q.ids, q.cams))) == len(q)


def test_synth_zero_noise_gives_identical_samples():
    spec = SynthSpec(n_identities=3, cluster_std=0.0, camera_shift_strength=0.0, eval_per_identity=0)
    _, target = synth_generate(spec)
    for y in np.unique(target.ids):
        rows = target.inputs[target.ids == y]
        assert_array_equal(rows, np.tile(rows[:1], (len(rows), 1)))


def test_synth_validation():
    with pytest.raises(ValueError):
        SynthSpec(n_identities=0)
    with pytest.raises(ValueError):
        SynthSpec(cluster_std=-1)
    with pytest.raises(ValueError):
        SynthSpec(attribute_share=1.0)


def test_two_identities_recovered_by_kmeans():
    spec = SynthSpec(n_identities=2, samples_per_identity=8, cluster_std=0.05, attribute_groups=0,
                     eval_per_identity=0, seed=1)
    _, target = synth_generate(spec)
    feats = l2_normalize_rows(target.inputs)
    labels = kmeans(feats, 2, seed=0).labels
    truth = target.ids
    assert any(all(perm[a] == b for a, b in zip(labels, truth))
               for perm in ({0: truth[0], 1: truth[-1]}, {0: truth[-1], 1: truth[0]}))
    assert cluster_metrics(labels, truth)["ari"] == pytest.approx(1.0)


def _brute_ap(qf, qid, qcam, gf, gids, gcams):
    """AP by explicit precision-at-each-hit over the ranked, filtered gallery."""
    sims = [(-(qf @ gf[j]), j) for j in range(len(gf)) if not (gids[j] == qid and gcams[j] == qcam)]
    ranked = [j for _, j in sorted(sims)]
    hits, precisions = 0, []
    for pos, j in enumerate(ranked, start=1):
        if gids[j] == qid:
            hits += 1
            precisions.append(hits / pos)
    return sum(precisions) / len(precisions) if precisions else None


def test_map_examples():
    q = np.array([[1.0, 0.0]])
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert mean_ap(q, [0], [0], g, [0, 1], [1, 1]) == 1.0
    g = l2_normalize_rows(np.array([[1.0, 0.0], [1.0, 0.5], [1.0, 1.0], [0.0, 1.0]]))
    assert mean_ap(q, [0], [0], g, [0, 1, 0, 2], [1, 1, 1, 1]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-12)


def test_same_camera_matches_are_excluded():
    q = np.array([[1.0, 0.0]])
    g = l2_normalize_rows(np.array([[1.0, 0.0], [1.0, 0.2], [1.0, 0.4]]))
    assert mean_ap(q, [0], [0], g, [0, 1, 0], [0, 1, 1]) == pytest.approx(0.5)
    with pytest.raises(NoValidQueries):
        mean_ap(q, [0], [0], g, [0, 1, 1], [0, 1, 1])


def test_map_and_cmc_against_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_g, n_q = int(rng.integers(1, 9)), int(rng.integers(1, 4))
        gf = l2_normalize_rows(rng.standard_normal((n_g, 3)))
        qf = l2_normalize_rows(rng.standard_normal((n_q, 3)))
        gids, gcams = rng.integers(0, 3, n_g), rng.integers(0, 2, n_g)
        qids, qcams = rng.integers(0, 3, n_q), rng.integers(0, 2, n_q)
        aps = [_brute_ap(qf[i], qids[i], qcams[i], gf, gids, gcams) for i in range(n_q)]
        aps = [a for a in aps if a is not None]
        if not aps:
            with pytest.raises(NoValidQueries):
                mean_ap(qf, qids, qcams, gf, gids, gcams)
            continue
        assert abs(mean_ap(qf, qids, qcams, gf, gids, gcams) - np.mean(aps)) < 1e-12
        perm = rng.permutation(n_g)
        assert abs(mean_ap(qf, qids, qcams, gf[perm], gids[perm], gcams[perm]) - np.mean(aps)) < 1e-12
        first = []
        for i in range(n_q):
            keep = ~((gids == qids[i]) & (gcams == qcams[i]))
            order = np.argsort(-(gf[keep] @ qf[i]), kind="stable")
            hits = np.flatnonzero(gids[keep][order] == qids[i])
            if hits.size:
                first.append(hits[0] + 1)
        got = cmc(qf, qids, qcams, gf, gids, gcams, ranks=(1, 2, 5))
        for r in (1, 2, 5):
            assert got[r] == pytest.approx(np.mean(np.array(first) <= r))


def test_cmc_examples():
    q = np.array([[1.0, 0.0]])
    g = l2_normalize_rows(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert cmc(q, [0], [0], g, [0, 1], [1, 1], ranks=(1, 5)) == {1: 1.0, 5: 1.0}
    assert cmc(q, [0], [0], g, [1, 0], [1, 1], ranks=(1, 5)) == {1: 0.0, 5: 1.0}


def test_cluster_metric_examples():
    truth = np.array([0, 0, 1, 1, 2, 2])
    assert cluster_metrics(truth, truth) == {"nmi": 1.0, "ari": 1.0, "purity": 1.0, "noise_rate": 0.0}
    const = cluster_metrics(np.zeros(6, dtype=int), np.array([0, 0, 0, 1, 1, 2]))
    assert const["ari"] == pytest.approx(0.0, abs=1e-12)
    assert const["purity"] == pytest.approx(0.5)
    with pytest.raises(LengthMismatch):
        cluster_metrics([0, 1], [0])


def test_cluster_metrics_against_sklearn_and_contingency():
    rng = np.random.default_rng(1)
    for _ in range(100):
        pred, true = rng.integers(0, 4, 12), rng.integers(0, 3, 12)
        got = cluster_metrics(pred, true)
        assert got["nmi"] == pytest.approx(normalized_mutual_info_score(true, pred, average_method="arithmetic"), abs=1e-12)
        assert got["ari"] == pytest.approx(adjusted_rand_score(true, pred), abs=1e-12)
        majority = {p: np.bincount(true[pred == p]).argmax() for p in np.unique(pred)}
        wrong = np.mean([majority[p] != t for p, t in zip(pred, true)])
        purity = sum(np.bincount(true[pred == p]).max() for p in np.unique(pred)) / 12
        assert got["noise_rate"] == pytest.approx(wrong)
        assert got["purity"] == pytest.approx(purity)
        rename = rng.permutation(10)
        again = cluster_metrics(rename[pred], rename[true] + 100)
        for key in got:
            assert again[key] == pytest.approx(got[key], abs=1e-12)


def test_noise_counts_as_wrong():
    out = cluster_metrics([0, 0, -1, 1], [0, 0, 1, 1])
    assert out["noise_rate"] == pytest.approx(0.25)


def test_embedding_round_trip(tmp_path):
    _, target = synth_generate(SynthSpec(n_identities=3, samples_per_identity=4, eval_per_identity=2))
    export_embeddings(tmp_path / "t.csv", target)
    back = ingest_embeddings(tmp_path / "t.csv", normalize=False)
    assert_array_equal(back.inputs, target.inputs)
    assert_array_equal(back.ids, target.ids)
    assert_array_equal(back.cams, target.cams)
    assert list(back.split) == list(target.split)
    normed = ingest_embeddings(tmp_path / "t.csv")
    assert_allclose(normed.inputs, l2_normalize_rows(target.inputs))


def test_ingest_errors(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("id,camera,split,f0,f1\n1,0,source,0.5,0.5\n2,0,source,0.5,0.5\n")
    assert len(ingest_embeddings(path)) == 2
    path.write_text("id,camera,split,f0,f1\n1,0,source,0.5,0.5\n2,0,source,0.5\n")
    with pytest.raises(ParseError) as exc:
        ingest_embeddings(path)
    assert exc.value.line == 3
    path.write_text("id,camera,split,f0,f2\n1,0,source,0.5,0.5\n")
    with pytest.raises(DimMismatch):
        ingest_embeddings(path)
    path.write_text("id,camera,split,f0\n1,0,elsewhere,0.5\n")
    with pytest.raises(ParseError):
        ingest_embeddings(path)
