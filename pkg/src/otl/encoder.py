"""Small tanh MLP encoder with hand-written backprop.

Maps raw input rows to L2-normalized embeddings. Hidden layers use tanh; the
last layer is linear and its output is row-normalized.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch, ZeroRow
from .numerics import ZERO_NORM, as_matrix

MAGIC = b"OTL1"


@dataclass(frozen=True)
class EncoderParams:
    """Layer weights ``W_l`` (in x out) and biases ``b_l`` (out,), in order."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(f"layer {i} input does not match previous output")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        """Parameters in declaration order: W1, b1, W2, b2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "EncoderParams":
        arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def map(self, fn, *others) -> "EncoderParams":
        cols = zip(self.arrays(), *(o.arrays() for o in others))
        return EncoderParams.from_arrays([fn(*c) for c in cols])


def init_params(dims, seed=0) -> EncoderParams:
    """Xavier-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EncoderParams(tuple(weights), tuple(biases))


@dataclass
class ForwardTape:
    inputs: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    raw: np.ndarray | None = None
    norms: np.ndarray | None = None
    out: np.ndarray | None = None


def forward(params: EncoderParams, inputs):
    x = as_matrix(inputs)
    if x.shape[1] != params.dims[0]:
        raise ShapeMismatch(f"input dim {x.shape[1]} != encoder input dim {params.dims[0]}")
    tape = ForwardTape()
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(h)
        z = h @ w + b
        if i < last:
            h = np.tanh(z)
            tape.activations.append(h)
        else:
            h = z
    norms = np.sqrt(np.einsum("ij,ij->i", h, h))
    bad = np.flatnonzero(norms < ZERO_NORM)
    if bad.size:
        raise ZeroRow(int(bad[0]))
    tape.raw, tape.norms = h, norms
    tape.out = h / norms[:, None]
    return tape.out, tape


def normalize_backward(out, norms, grad_out):
    """Gradient through ``f = z / |z|``: ``(I - f f^T) g / |z|`` row-wise."""
    radial = np.einsum("ij,ij->i", out, grad_out)
    return (grad_out - out * radial[:, None]) / norms[:, None]


def backward(params: EncoderParams, tape: ForwardTape, grad_features) -> EncoderParams:
    g = as_matrix(grad_features)
    if g.shape != tape.out.shape:
        raise ShapeMismatch(f"upstream gradient {g.shape} != features {tape.out.shape}")
    g = normalize_backward(tape.out, tape.norms, g)
    n_layers = len(params.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gw[i] = tape.inputs[i].T @ g
        gb[i] = g.sum(axis=0)
        if i:
            g = (g @ params.weights[i].T) * (1.0 - tape.activations[i - 1] ** 2)
    return EncoderParams(tuple(gw), tuple(gb))


def encode(params: EncoderParams, inputs) -> np.ndarray:
    return forward(params, inputs)[0]


def sgd_step(params: EncoderParams, grads: EncoderParams, lr: float) -> EncoderParams:
    return params.map(lambda p, g: p - lr * g, grads)


class Adam:
    """Adam over a list of arrays (bias-corrected)."""

    def __init__(self, lr=3.5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: list, grads: list) -> list:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


def adam_step(params: EncoderParams, grads: EncoderParams, opt: Adam) -> EncoderParams:
    return EncoderParams.from_arrays(opt.step(params.arrays(), grads.arrays()))


def save_checkpoint(path, params: EncoderParams, prototypes=()) -> None:
    """Write ``OTL1`` magic, dims, parameters, then one section per prototype group.

    All integers are little-endian uint32, all reals little-endian float64.
    """
    dims = params.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(prototypes)))
        for g in prototypes:
            k, d = g.C.shape
            fh.write(struct.pack("<IId", k, d, g.tau))
            fh.write(np.ascontiguousarray(g.C, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Inverse of ``save_checkpoint``: returns ``(params, [(C, tau), ...])``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an encoder checkpoint")
    off = 4
    (n_dims,) = struct.unpack_from("<I", data, off)
    off += 4
    dims = struct.unpack_from(f"<{n_dims}I", data, off)
    off += 4 * n_dims
    arrays = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            size = int(np.prod(shape))
            arrays.append(np.frombuffer(data, "<f8", size, off).reshape(shape).astype(np.float64))
            off += 8 * size
    groups = []
    if off < len(data):
        (n_groups,) = struct.unpack_from("<I", data, off)
        off += 4
        for _ in range(n_groups):
            k, d, tau = struct.unpack_from("<IId", data, off)
            off += 16
            C = np.frombuffer(data, "<f8", k * d, off).reshape(k, d).astype(np.float64)
            off += 8 * k * d
            groups.append((C, tau))
    return EncoderParams.from_arrays(arrays), groups
