"""Hyperparameters and the key/value config file format.

A config file holds one ``key = value`` pair per line. ``#`` starts a comment.
Values are Python literals (``25``, ``0.05``, ``true``, ``[20, 40]``,
``"kmeans"``); bare words are read as strings. Unknown keys are an error.
"""
from __future__ import annotations

import ast
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .clustering import GroupSpec
from .label_transfer import SinkhornConfig
from .losses import LossWeights

_BOOL = {"true": True, "false": False, "yes": True, "no": False, "on": True, "off": False}


@dataclass
class TrainConfig:
    seed: int = 0
    # encoder
    hidden_dim: int = 64
    embed_dim: int = 32
    optimizer: str = "adam"
    lr: float = 3.5e-4
    lr_step: int = 10
    lr_gamma: float = 0.1
    # source pre-training
    epochs_pretrain: int = 30
    pretrain_iters_per_epoch: int = 20
    # adaptation
    adapt_epochs: int = 10
    iters_per_epoch: int = 40
    adapt_lr: float = 3.5e-4
    batch_p: int = 4
    batch_k: int = 4
    source_mode: str = "alternate"
    # losses
    w_tri: float = 1.0
    w_g: float = 1.0
    w_wcl: float = 0.05
    triplet_margin: float = 0.3
    wcl_margin: float = 0.3
    wcl_scale: float = 32.0
    # prototypes / label refinement
    tau: float = 0.05
    prototype_mode: str = "parametric"
    refine: bool = True
    refresh_every: int = 0
    sinkhorn_lam: float = 25.0
    sinkhorn_tol: float = 0.1
    sinkhorn_max_iter: int = 1000
    sinkhorn_marginal_tol: float = 1e-6
    # clustering
    cluster_mode: str = "kmeans"
    k_list: list = field(default_factory=list)
    eps_list: list = field(default_factory=lambda: [0.56, 0.58, 0.60, 0.62, 0.64])
    min_pts: int = 4
    recluster_every: int = 5  # 0: cluster only once, before the first epoch
    kmeans_max_iter: int = 100
    # memory bank
    use_bank: bool = True
    bank_capacity: int = 0
    bank_group: int = 0

    def __post_init__(self):
        counts = (self.hidden_dim, self.embed_dim, self.batch_p, self.batch_k)
        if min(counts) < 1:
            raise ValueError("dimensions and batch sizes must be positive")
        if min(self.epochs_pretrain, self.adapt_epochs, self.iters_per_epoch,
               self.pretrain_iters_per_epoch, self.refresh_every, self.recluster_every) < 0:
            raise ValueError("epoch and iteration counts must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.source_mode not in ("alternate", "joint", "off"):
            raise ValueError(f"unknown source_mode {self.source_mode!r}")
        self.group_spec()
        self.loss_weights()
        self.sinkhorn_config()

    @property
    def batch_size(self) -> int:
        return self.batch_p * self.batch_k

    @property
    def capacity(self) -> int:
        return self.bank_capacity or 8 * self.batch_size

    @property
    def refresh_iters(self) -> int:
        """Iterations between refinements; 0 in the file means once per epoch."""
        return self.refresh_every or self.iters_per_epoch

    def group_spec(self) -> GroupSpec:
        return GroupSpec(self.cluster_mode, tuple(self.k_list), tuple(self.eps_list), self.min_pts)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_tri, self.w_g, self.w_wcl, self.triplet_margin,
                           self.wcl_margin, self.wcl_scale)

    def sinkhorn_config(self) -> SinkhornConfig:
        return SinkhornConfig(self.sinkhorn_lam, self.sinkhorn_tol, self.sinkhorn_max_iter,
                              self.sinkhorn_marginal_tol)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_format(v)}")
        return "\n".join(lines) + "\n"


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    return repr(v)


def parse_value(text: str):
    text = text.strip()
    if text.lower() in _BOOL:
        return _BOOL[text.lower()]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(name: str, value):
    kinds = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    if name not in kinds:
        raise KeyError(f"unknown config key {name!r}")
    kind = kinds[name]
    if kind == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind == "list" and isinstance(value, tuple):
        return list(value)
    if kind == "list" and isinstance(value, (int, float)):
        return [value]
    return value


def parse_pairs(lines, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        out[key] = _coerce(key, parse_value(value))
    return out


def load_config(path=None, overrides=(), env=None) -> TrainConfig:
    """Read a config file, apply ``key=value`` overrides, then ``OTL_SEED``."""
    values = {}
    if path is not None:
        values.update(parse_pairs(Path(path).read_text().splitlines(), str(path)))
    values.update(parse_pairs(overrides, "--set"))
    env = os.environ if env is None else env
    if env.get("OTL_SEED"):
        values["seed"] = int(env["OTL_SEED"])
    return TrainConfig(**values)


def packaged_config(name: str) -> Path:
    return Path(__file__).parent / "configs" / f"{name}.cfg"
