import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from otl.cli import main
from otl.numerics import read_matrix_csv, write_matrix_csv

FAST = ["--set", "epochs_pretrain=2", "--set", "pretrain_iters_per_epoch=5", "--set", "adapt_epochs=2",
        "--set", "iters_per_epoch=5", "--set", "k_list=[6, 3]", "--set", "tau=0.1",
        "--set", "sinkhorn_lam=2.0", "--set", "sinkhorn_max_iter=50000", "--set", "hidden_dim=16",
        "--set", "embed_dim=8"]
SMALL_DATA = ["--synth", "n_identities=6", "--synth", "n_source_identities=6",
              "--synth", "samples_per_identity=8", "--synth", "source_samples_per_identity=8",
              "--synth", "eval_per_identity=6", "--synth", "input_dim=12"]


def test_missing_command_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_bad_flag_and_key_are_usage_errors(tmp_path):
    assert main(["refine", "--bogus"]) == 2
    assert main(["synth", "--out", str(tmp_path), "--set", "no_such_key=1"]) == 2
    assert main(["synth", "--out", str(tmp_path), "--synth", "colour=3"]) == 2


def test_runtime_error_exit_code(tmp_path):
    assert main(["refine", "--out", str(tmp_path), "--p", str(tmp_path / "missing.csv")]) == 1
    assert main(["synth", "--out", str(tmp_path), "--synth", "n_identities=0"]) == 1


def test_refine_uniform_p(tmp_path, capsys):
    write_matrix_csv(tmp_path / "p.csv", np.full((2, 4), 1 / 8))
    assert main(["refine", "--p", str(tmp_path / "p.csv"), "--out", str(tmp_path)]) == 0
    assert_allclose(read_matrix_csv(tmp_path / "Q.csv"), 1 / 8, atol=1e-15)
    sidecar = json.loads((tmp_path / "Q.json").read_text())
    assert set(sidecar) == {"iters", "marginal_err", "objective"}
    assert sidecar["marginal_err"] < 1e-6
    assert json.loads(capsys.readouterr().out) == sidecar


def test_refine_from_features(tmp_path):
    rng = np.random.default_rng(0)
    f = rng.standard_normal((6, 3))
    write_matrix_csv(tmp_path / "f.csv", f / np.linalg.norm(f, axis=1, keepdims=True))
    write_matrix_csv(tmp_path / "c.csv", np.eye(3))
    args = ["refine", "--features", str(tmp_path / "f.csv"), "--prototypes", str(tmp_path / "c.csv"),
            "--tau", "0.5", "--lam", "3", "--out", str(tmp_path)]
    assert main(args) == 0
    Q = read_matrix_csv(tmp_path / "Q.csv")
    assert Q.shape == (3, 6)
    assert_allclose(Q.sum(axis=1), 1 / 3, atol=1e-6)
    assert main(["refine", "--out", str(tmp_path)]) == 2


def _run_adapt(out):
    assert main(["adapt", "--out", str(out)] + FAST + SMALL_DATA) == 0
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_adapt_outputs_are_byte_identical(tmp_path, capsys):
    first = _run_adapt(tmp_path / "a")
    second = _run_adapt(tmp_path / "b")
    assert first == second
    assert {"encoder.ckpt", "metrics.jsonl", "losses.jsonl", "sinkhorn.jsonl", "config.cfg",
            "pseudo_labels.csv"} <= set(first)
    rows = [json.loads(line) for line in first["metrics.jsonl"].decode().splitlines()]
    assert len(rows) == 3


def test_pipeline_synth_pretrain_adapt_eval(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path)] + SMALL_DATA) == 0
    data = ["--source", str(tmp_path / "source.csv"), "--target", str(tmp_path / "target.csv")]
    assert main(["pretrain", "--out", str(tmp_path / "pre")] + FAST + data) == 0
    assert (tmp_path / "pre" / "encoder.ckpt").exists()
    args = ["adapt", "--out", str(tmp_path / "ad"), "--checkpoint", str(tmp_path / "pre" / "encoder.ckpt"),
            "--head", str(tmp_path / "pre" / "source_head.csv")] + FAST + data
    assert main(args) == 0
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(tmp_path / "ad" / "encoder.ckpt")] + FAST + data) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert 0.0 <= metrics["map"] <= 1.0 and "nmi" in metrics


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("OTL_SEED", "7")
    assert main(["synth", "--out", str(tmp_path / "a")] + SMALL_DATA) == 0
    monkeypatch.setenv("OTL_SEED", "8")
    assert main(["synth", "--out", str(tmp_path / "b")] + SMALL_DATA) == 0
    assert (tmp_path / "a" / "source.csv").read_bytes() != (tmp_path / "b" / "source.csv").read_bytes()


def test_ablate_table(tmp_path, capsys):
    args = ["ablate", "--out", str(tmp_path), "--seeds", "0,1"] + FAST + SMALL_DATA
    assert main(args) == 0
    table = [json.loads(line) for line in (tmp_path / "ablation.jsonl").read_text().splitlines()]
    assert [r["row"] for r in table] == ["baseline", "+LT", "+bank", "+GLT"]
    for row in table:
        assert all(np.isfinite(row[k]) for k in ("map", "nmi", "noise_rate"))
    assert "+GLT" in capsys.readouterr().out


def test_packaged_configs_load():
    from otl.config import load_config, packaged_config

    for name in ("published_defaults", "synth_benchmark"):
        cfg = load_config(packaged_config(name), env={})
        assert cfg.batch_size >= 4
    assert load_config(packaged_config("published_defaults"), env={}).k_list == [500, 1000, 1500, 2000]
