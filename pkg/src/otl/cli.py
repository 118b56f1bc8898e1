"""Command-line entry point: ``otl <command> [options]``.

Commands: synth, pretrain, adapt, eval, refine, ablate. Hyperparameters come
from ``--config`` (a key = value file) with ``--set key=value`` overrides;
``OTL_SEED`` overrides the seed. Every output file goes under ``--out``.
Exit status is 0 on success, 1 on a runtime error and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import ablation, encoder as enc
from .clustering import HardLabeling, export_labelings, kmeans
from .config import TrainConfig, load_config, packaged_config, parse_value
from .data import SynthSpec, export_embeddings, ingest_embeddings, synth_generate
from .errors import OTLError
from .label_transfer import SinkhornConfig, refine, sinkhorn, uniform_polytope
from .numerics import read_matrix_csv, write_matrix_csv
from .prototypes import PrototypeGroup
from .trainer import adapt, evaluate, pretrain_source

log = logging.getLogger("otl")


class UsageError(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(_dumps(row) + "\n")


def _synth_spec(pairs, seed: int) -> SynthSpec:
    fields = {f.name for f in dataclasses.fields(SynthSpec)}
    values = {"seed": seed}
    for item in pairs or ():
        if "=" not in item:
            raise UsageError(f"--synth expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in fields:
            raise UsageError(f"unknown synth field {key!r}")
        values[key] = parse_value(value)
    return SynthSpec(**values)


def _config(args) -> TrainConfig:
    path = args.config
    if path is not None and not Path(path).exists():
        packaged = packaged_config(path)
        if packaged.exists():
            path = packaged
    try:
        return load_config(path, args.set or ())
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def _datasets(args, cfg):
    """``(source, target)`` from CSV files or, when absent, the synthetic generator."""
    source = target = None
    if getattr(args, "source", None):
        source = ingest_embeddings(args.source, normalize=False)
    if getattr(args, "target", None):
        target = ingest_embeddings(args.target, normalize=False)
    if source is None or target is None:
        gen_source, gen_target = synth_generate(_synth_spec(args.synth, cfg.seed))
        source = gen_source if source is None else source
        target = gen_target if target is None else target
    return source, target


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_head(path):
    return read_matrix_csv(path) if path else None


def cmd_synth(args, cfg):
    out = _out_dir(args)
    source, target = synth_generate(_synth_spec(args.synth, cfg.seed))
    export_embeddings(out / "source.csv", source)
    export_embeddings(out / "target.csv", target)
    print(f"wrote {len(source)} source and {len(target)} target rows to {out}")


def cmd_pretrain(args, cfg):
    out = _out_dir(args)
    source, _ = _datasets(args, cfg)
    params, head, losses = pretrain_source(source, cfg)
    enc.save_checkpoint(out / "encoder.ckpt", params)
    write_matrix_csv(out / "source_head.csv", head)
    _write_jsonl(out / "pretrain_losses.jsonl", ({"iter": i + 1, "loss": v} for i, v in enumerate(losses)))
    print(f"pre-trained for {len(losses)} iterations; final loss {losses[-1]:.6f}" if losses
          else "no pre-training iterations configured")


def cmd_adapt(args, cfg):
    out = _out_dir(args)
    source, target = _datasets(args, cfg)
    params = head = None
    if args.checkpoint:
        params, _ = enc.load_checkpoint(args.checkpoint)
        head = _load_head(args.head)
    state, history, losses = adapt(source, target, cfg, params=params, head=head)
    enc.save_checkpoint(out / "encoder.ckpt", state.params, state.groups)
    _write_jsonl(out / "metrics.jsonl", history)
    _write_jsonl(out / "losses.jsonl", losses)
    _write_jsonl(out / "sinkhorn.jsonl", state.sinkhorn_log)
    (out / "config.cfg").write_text(cfg.to_text())
    export_labelings(out / "pseudo_labels.csv",
                     [HardLabeling(state.hard[:, m], g.k, g.C) for m, g in enumerate(state.groups)])
    print(_dumps(history[-1]))


def cmd_eval(args, cfg):
    _, target = _datasets(args, cfg)
    params, _ = enc.load_checkpoint(args.checkpoint)
    train = target.where("target_train")
    labels = None
    if len(train):
        feats = enc.encode(params, train.inputs)
        k = cfg.group_spec().k_list_for(len(train))[0]
        labels = kmeans(feats, k, seed=cfg.seed, max_iter=cfg.kmeans_max_iter).labels
    print(_dumps(evaluate(params, target, labels)))


def cmd_refine(args, cfg):
    out = _out_dir(args)
    sk = SinkhornConfig(args.lam if args.lam is not None else cfg.sinkhorn_lam, cfg.sinkhorn_tol,
                        cfg.sinkhorn_max_iter, cfg.sinkhorn_marginal_tol)
    if args.p:
        if args.features or args.prototypes:
            raise UsageError("give either --p or --features with --prototypes")
        P = read_matrix_csv(args.p)
        res = sinkhorn(P, uniform_polytope(*P.shape), sk)
    elif args.features and args.prototypes:
        tau = args.tau if args.tau is not None else cfg.tau
        group = PrototypeGroup(read_matrix_csv(args.prototypes), tau)
        res = refine(read_matrix_csv(args.features), group.C, tau, cfg=sk)
    else:
        raise UsageError("refine needs --p, or --features and --prototypes")
    write_matrix_csv(out / "Q.csv", res.Q)
    sidecar = {"iters": res.iters, "marginal_err": res.marginal_err, "objective": res.objective}
    (out / "Q.json").write_text(_dumps(sidecar) + "\n")
    print(_dumps(sidecar))


def cmd_ablate(args, cfg):
    out = _out_dir(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    spec_fields = {k: v for k, v in dataclasses.asdict(_synth_spec(args.synth, 0)).items() if k != "seed"}
    records, table, seconds = ablation.timed_run(cfg, seeds, spec_fields)
    log.info("ablation finished in %.1f s", seconds)
    _write_jsonl(out / "ablation_runs.jsonl", records)
    _write_jsonl(out / "ablation.jsonl", table)
    text = ablation.format_table(table)
    (out / "ablation.txt").write_text(text)
    print(text, end="")


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "adapt": cmd_adapt,
            "eval": cmd_eval, "refine": cmd_refine, "ablate": cmd_ablate}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="config file, or the name of a packaged config")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    data = _Parser(add_help=False)
    data.add_argument("--source", help="source embedding CSV (default: synthetic)")
    data.add_argument("--target", help="target embedding CSV (default: synthetic)")
    data.add_argument("--synth", action="append", metavar="KEY=VALUE", help="synthetic data field")

    parser = _Parser(prog="otl", description="Pseudo-label refinement by entropic optimal transport.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("synth", parents=[common, data], help="write synthetic source/target CSVs")
    sub.add_parser("pretrain", parents=[common, data], help="supervised source pre-training")
    p = sub.add_parser("adapt", parents=[common, data], help="run the adaptation loop")
    p.add_argument("--checkpoint", help="start from this encoder instead of pre-training")
    p.add_argument("--head", help="source classifier CSV written by pretrain")
    p = sub.add_parser("eval", parents=[common, data], help="print target metrics JSON")
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("refine", parents=[common], help="one Sinkhorn refinement on CSV matrices")
    p.add_argument("--p", help="K x N joint probability matrix")
    p.add_argument("--features", help="N x D feature matrix")
    p.add_argument("--prototypes", help="K x D prototype matrix")
    p.add_argument("--tau", type=float)
    p.add_argument("--lam", type=float)
    p = sub.add_parser("ablate", parents=[common, data], help="baseline / +LT / +bank / +GLT grid")
    p.add_argument("--seeds", help="comma separated seeds (default: the config seed)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(parser.format_usage(), end="", file=sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OTLError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
