"""The component ablation grid: baseline, +LT, +bank, full GLT.

Every row shares one pre-trained encoder per seed so that differences come
only from the adaptation stage. Single-group rows use the first entry of the
configured k list; the full row uses all of them.
"""
from __future__ import annotations

import time

import numpy as np

from .config import TrainConfig
from .data import SynthSpec, synth_generate
from .trainer import adapt, pretrain_source

ROWS = ("baseline", "+LT", "+bank", "+GLT")
METRICS = ("map", "top1", "top5", "top10", "nmi", "ari", "purity", "noise_rate")


def row_configs(cfg: TrainConfig) -> dict:
    """Per-row configs derived from ``cfg`` (the full GLT setting)."""
    ks = cfg.k_list or []
    single = ks[:1]
    return {
        "baseline": cfg.replace(refine=False, use_bank=False, k_list=single),
        "+LT": cfg.replace(refine=True, use_bank=False, k_list=single),
        "+bank": cfg.replace(refine=True, use_bank=True, k_list=single),
        "+GLT": cfg.replace(refine=True, use_bank=True, k_list=list(ks)),
    }


def run_seed(cfg: TrainConfig, seed: int, spec: SynthSpec | None = None) -> list[dict]:
    """All four rows on one synthetic draw; one record per row."""
    spec = SynthSpec(seed=seed) if spec is None else spec
    cfg = cfg.replace(seed=seed)
    source, target = synth_generate(spec)
    params, head, _ = pretrain_source(source, cfg)
    out = []
    for name, row_cfg in row_configs(cfg).items():
        _, history, _ = adapt(source, target, row_cfg, params=params, head=head)
        rec = {"row": name, "seed": seed, "noise_history": [h["noise_rate"] for h in history]}
        rec.update({k: history[-1][k] for k in METRICS})
        out.append(rec)
    return out


def run(cfg: TrainConfig, seeds, spec_fields: dict | None = None) -> tuple[list[dict], list[dict]]:
    """Run every seed; returns ``(per_seed_records, median_table)``."""
    records = []
    for seed in seeds:
        spec = SynthSpec(**{**(spec_fields or {}), "seed": seed})
        records.extend(run_seed(cfg, seed, spec))
    return records, median_table(records)


def median_table(records: list[dict]) -> list[dict]:
    table = []
    for name in ROWS:
        rows = [r for r in records if r["row"] == name]
        if not rows:
            continue
        entry = {"row": name, "n_seeds": len(rows)}
        entry.update({k: float(np.median([r[k] for r in rows])) for k in METRICS})
        table.append(entry)
    return table


def format_table(table: list[dict]) -> str:
    cols = ("map", "top1", "top5", "nmi", "ari", "noise_rate")
    lines = ["row       " + " ".join(f"{c:>10}" for c in cols)]
    for entry in table:
        lines.append(f"{entry['row']:<10}" + " ".join(f"{entry[c]:>10.4f}" for c in cols))
    return "\n".join(lines) + "\n"


def timed_run(cfg: TrainConfig, seeds, spec_fields=None):
    """``run`` plus wall-clock seconds (kept out of every output file)."""
    start = time.perf_counter()
    records, table = run(cfg, seeds, spec_fields)
    return records, table, time.perf_counter() - start
