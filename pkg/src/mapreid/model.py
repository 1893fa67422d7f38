"""Small embedding network with hand-written backprop, SGD and checkpoints.

Checkpoint layout (all integers little-endian, floats IEEE-754 fp64 LE)::

    magic       8 bytes   b"MAPRCKPT"
    version     u32       1
    seed        u64
    step        u64
    config_len  u32, then config_len bytes of UTF-8 "key = value" lines
    n_layers    u32
      per layer: out u32, in u32, relu_after u8, weight out*in f64 (row-major), bias out f64
    has_head    u8
      if 1:      classes u32, dim u32, weight classes*dim f64, bias classes f64
    lr, momentum, weight_decay   3 x f64
    n_buffers   u32
      per buffer: ndim u32, dims ndim x u32, payload f64 (row-major)

Velocity buffers are ordered like the parameters: layer weights/biases in
order, then head weight and bias.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import as_embeddings
from .errors import (DimensionMismatch, FormatError, NonFiniteGradient, ShapeMismatch,
                     StaleCache, ZeroNormRow)
from .losses import ClassifierHead

CHECKPOINT_MAGIC = b"MAPRCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class Affine:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    relu_after: bool = False

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


@dataclass
class ForwardCache:
    inputs: list
    pre_acts: list
    version: int


class EmbeddingModel:
    """Affine layers with ReLU between consecutive layers (none after the last)."""

    def __init__(self, layers):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionMismatch(f"layer output {a.out_dim} feeds layer input {b.in_dim}")
        self.version = 0

    @classmethod
    def build(cls, input_dim, widths=(128, 64), rng=None):
        """Glorot-uniform weights, zero biases; ``widths`` lists hidden sizes then the output size."""
        rng = np.random.default_rng(0) if rng is None else rng
        dims = [int(input_dim), *map(int, widths)]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            layers.append(Affine(w, np.zeros(fan_out), relu_after=i < len(dims) - 2))
        return cls(layers)

    @classmethod
    def identity(cls, dim):
        return cls([Affine(np.eye(dim), np.zeros(dim))])

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def num_params(self):
        return sum(p.size for p in self.params())

    def params(self):
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def clone(self):
        return EmbeddingModel([Affine(l.weight.copy(), l.bias.copy(), l.relu_after) for l in self.layers])

    def forward(self, inputs):
        x = as_embeddings(inputs, "inputs")
        if x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"input dim {x.shape[1]} != model input dim {self.input_dim}")
        ins, pres = [], []
        for layer in self.layers:
            ins.append(x)
            z = x @ layer.weight.T + layer.bias
            pres.append(z)
            x = np.maximum(z, 0.0) if layer.relu_after else z
        return x, ForwardCache(ins, pres, self.version)

    def embed(self, inputs):
        return self.forward(inputs)[0]

    def backward(self, cache: ForwardCache, d_out):
        """Parameter gradients (same order as :meth:`params`) and ``dL/dinputs``."""
        if cache.version != self.version or len(cache.inputs) != len(self.layers):
            raise StaleCache("forward cache predates the latest parameter update")
        g = np.asarray(d_out, dtype=np.float64)
        if g.shape != cache.pre_acts[-1].shape:
            raise DimensionMismatch(f"upstream gradient {g.shape} != output {cache.pre_acts[-1].shape}")
        grads = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if layer.relu_after:
                g = g * (cache.pre_acts[i] > 0.0)
            grads[2 * i] = g.T @ cache.inputs[i]
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ layer.weight
        return grads, g


def normalize_with_backward(features):
    """Row-wise L2 normalization and the map ``dL/d(unit) -> dL/d(features)``.

    The Jacobian of ``x / |x|`` is ``(I - u u^T) / |x|``.
    """
    x = as_embeddings(features, "features")
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    bad = np.flatnonzero(norms <= 1e-12)
    if bad.size:
        raise ZeroNormRow(bad[0])
    unit = x / norms[:, None]

    def backward(d_unit):
        d = np.asarray(d_unit, dtype=np.float64)
        radial = np.einsum("ij,ij->i", d, unit)
        return (d - radial[:, None] * unit) / norms[:, None]

    return unit, backward


@dataclass
class SgdOptimizer:
    """``v <- mu * v - lr * (g + wd * theta); theta <- theta + v`` per parameter."""

    learning_rate: float = 3.5e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    def step(self, params, grads, lr=None):
        """Update ``params`` in place."""
        lr = self.learning_rate if lr is None else lr
        if len(params) != len(grads):
            raise ShapeMismatch(f"{len(grads)} gradients for {len(params)} parameters")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ShapeMismatch(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient("gradient contains NaN or Inf")
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v -= lr * (g + self.weight_decay * p)
            p += v
            if not np.all(np.isfinite(p)):
                raise NonFiniteGradient("parameter became non-finite after the update")


def sgd_step(opt: SgdOptimizer, model: EmbeddingModel, grads, extra_params=(), extra_grads=(), lr=None):
    """Apply one optimizer step to the model (and any extra parameters, e.g. a classifier head)."""
    opt.step(model.params() + list(extra_params), list(grads) + list(extra_grads), lr=lr)
    model.version += 1
    return model


def step_decay(base_lr, epoch, step_size=0, gamma=0.1):
    """Learning rate after ``epoch`` epochs; ``step_size=0`` disables decay."""
    if step_size <= 0:
        return base_lr
    return base_lr * gamma ** (epoch // step_size)


# -- checkpoints -----------------------------------------------------------

@dataclass
class Checkpoint:
    model: EmbeddingModel
    head: ClassifierHead | None
    optimizer: SgdOptimizer
    seed: int = 0
    step: int = 0
    config: dict = field(default_factory=dict)


def _f64(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _read(buf, n):
    b = buf.read(n)
    if len(b) != n:
        raise FormatError("checkpoint truncated")
    return b


def _unpack(buf, fmt):
    return struct.unpack(fmt, _read(buf, struct.calcsize(fmt)))


def _read_f64(buf, shape):
    count = int(np.prod(shape)) if len(shape) else 1
    return np.frombuffer(_read(buf, 8 * count), dtype="<f8").astype(np.float64).reshape(shape)


def config_to_text(config):
    return "".join(f"{k} = {v}\n" for k, v in config.items())


def config_from_text(text):
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def checkpoint_bytes(ck: Checkpoint):
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<IQQ", CHECKPOINT_VERSION, ck.seed, ck.step))
    cfg = config_to_text(ck.config).encode("utf-8")
    out.write(struct.pack("<I", len(cfg)))
    out.write(cfg)
    out.write(struct.pack("<I", len(ck.model.layers)))
    for layer in ck.model.layers:
        out.write(struct.pack("<IIB", layer.out_dim, layer.in_dim, int(layer.relu_after)))
        out.write(_f64(layer.weight))
        out.write(_f64(layer.bias))
    out.write(struct.pack("<B", ck.head is not None))
    if ck.head is not None:
        c, d = ck.head.weights.shape
        out.write(struct.pack("<II", c, d))
        out.write(_f64(ck.head.weights))
        out.write(_f64(ck.head.bias))
    opt = ck.optimizer
    out.write(struct.pack("<ddd", opt.learning_rate, opt.momentum, opt.weight_decay))
    out.write(struct.pack("<I", len(opt.velocity)))
    for v in opt.velocity:
        out.write(struct.pack("<I", v.ndim))
        out.write(struct.pack(f"<{v.ndim}I", *v.shape))
        out.write(_f64(v))
    return out.getvalue()


def checkpoint_from_bytes(data):
    buf = io.BytesIO(data)
    if _read(buf, 8) != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    version, seed, step = _unpack(buf, "<IQQ")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (cfg_len,) = _unpack(buf, "<I")
    config = config_from_text(_read(buf, cfg_len).decode("utf-8"))
    (n_layers,) = _unpack(buf, "<I")
    layers = []
    for _ in range(n_layers):
        out_d, in_d, relu = _unpack(buf, "<IIB")
        w = _read_f64(buf, (out_d, in_d))
        b = _read_f64(buf, (out_d,))
        layers.append(Affine(w, b, bool(relu)))
    (has_head,) = _unpack(buf, "<B")
    head = None
    if has_head:
        c, d = _unpack(buf, "<II")
        head = ClassifierHead(_read_f64(buf, (c, d)), _read_f64(buf, (c,)))
    lr, mom, wd = _unpack(buf, "<ddd")
    (n_buf,) = _unpack(buf, "<I")
    velocity = []
    for _ in range(n_buf):
        (ndim,) = _unpack(buf, "<I")
        shape = _unpack(buf, f"<{ndim}I")
        velocity.append(_read_f64(buf, shape))
    if buf.read(1):
        raise FormatError("trailing bytes after checkpoint payload")
    opt = SgdOptimizer(lr, mom, wd, velocity)
    return Checkpoint(EmbeddingModel(layers), head, opt, seed, step, config)


def save_checkpoint(path, ck: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ck))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
