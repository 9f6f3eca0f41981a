"""Feed-forward classifier over a flat parameter vector.

All parameters of a model live in one 1-D float64 array. The layout is
normative (see README): an optional conv stem first (kernel then bias),
then each dense layer in order, weights before bias. Dense weights are
stored row-major with shape (fan_out, fan_in), so row r holds the weights
of output unit r; the forward map is ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: dense widths plus an optional conv stem."""

    layer_dims: tuple[int, ...]
    activation: str = "relu"
    conv_stem: tuple[int, int, int] | None = None  # (channels, kernel, stride)

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        if len(self.layer_dims) < 2:
            raise ValueError("layer_dims needs at least input and output widths")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.conv_stem is not None:
            c, k, s = self.conv_stem
            if c < 1 or k < 1 or s < 1:
                raise ValueError("conv_stem entries must be >= 1")
            object.__setattr__(self, "conv_stem", (int(c), int(k), int(s)))

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def param_layout(spec: ModelSpec, in_channels: int = 1) -> list[LayoutEntry]:
    """Normative flat layout: conv stem first, then dense W/b pairs in order."""
    entries: list[LayoutEntry] = []
    off = 0

    def push(name, shape):
        nonlocal off
        entries.append(LayoutEntry(name, tuple(shape), off))
        off += int(np.prod(shape))

    if spec.conv_stem is not None:
        c, k, _ = spec.conv_stem
        push("conv.weight", (c, in_channels, k, k))
        push("conv.bias", (c,))
    dims = spec.layer_dims
    for i in range(len(dims) - 1):
        push(f"dense{i}.weight", (dims[i + 1], dims[i]))
        push(f"dense{i}.bias", (dims[i + 1],))
    return entries


def param_count(spec: ModelSpec, in_channels: int = 1) -> int:
    entries = param_layout(spec, in_channels)
    return entries[-1].offset + entries[-1].size if entries else 0


def flatten(parts: list[np.ndarray]) -> np.ndarray:
    """Concatenate parameter arrays row-major into one flat vector."""
    return np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])


def unflatten(spec: ModelSpec, w: np.ndarray, in_channels: int = 1) -> list[np.ndarray]:
    """Split a flat vector back into per-layer arrays (copies)."""
    w = np.asarray(w, dtype=np.float64)
    layout = param_layout(spec, in_channels)
    n = layout[-1].offset + layout[-1].size
    if w.shape != (n,):
        raise ShapeError(f"parameter vector has length {w.shape}, model needs ({n},)")
    return [w[e.offset:e.offset + e.size].reshape(e.shape).copy() for e in layout]


def init_params(spec: ModelSpec, seed: int, in_channels: int = 1) -> np.ndarray:
    """Fan-in-scaled uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    parts = []
    if spec.conv_stem is not None:
        c, k, _ = spec.conv_stem
        bound = np.sqrt(6.0 / (in_channels * k * k))
        parts.append(rng.uniform(-bound, bound, size=(c, in_channels, k, k)))
        parts.append(np.zeros(c))
    dims = spec.layer_dims
    for i in range(len(dims) - 1):
        bound = np.sqrt(6.0 / dims[i])
        parts.append(rng.uniform(-bound, bound, size=(dims[i + 1], dims[i])))
        parts.append(np.zeros(dims[i + 1]))
    return flatten(parts)


def _check_batch(spec: ModelSpec, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if spec.conv_stem is None:
        if batch.ndim != 2 or batch.shape[1] != spec.layer_dims[0]:
            raise ShapeError(
                f"batch shape {batch.shape} incompatible with input width {spec.layer_dims[0]}")
    elif batch.ndim != 4:
        raise ShapeError(f"conv stem needs a (N, C, H, W) batch, got shape {batch.shape}")
    return batch


def _forward_graph(spec: ModelSpec, w: np.ndarray, batch: np.ndarray):
    """Build the tape; returns (logits Var, parameter Vars in layout order)."""
    batch = _check_batch(spec, batch)
    in_channels = batch.shape[1] if spec.conv_stem is not None else 1
    params = [ad.Var(p) for p in unflatten(spec, w, in_channels)]
    act = ad.relu if spec.activation == "relu" else ad.tanh

    i = 0
    if spec.conv_stem is not None:
        _, _, stride = spec.conv_stem
        x = ad.conv2d(ad.Var(batch), params[0], params[1], stride)
        x = act(x)
        x = ad.flatten_batch(x)
        if x.shape[1] != spec.layer_dims[0]:
            raise ShapeError(
                f"conv stem produces {x.shape[1]} features, dense input is {spec.layer_dims[0]}")
        i = 2
    else:
        x = ad.Var(batch)

    last = len(params) - 2
    while i < len(params):
        x = ad.linear(x, params[i], params[i + 1])
        if i < last:
            x = act(x)
        i += 2
    return x, params


def forward(spec: ModelSpec, w: np.ndarray, batch: np.ndarray) -> np.ndarray:
    """Logits of shape (batch, classes)."""
    logits, _ = _forward_graph(spec, w, batch)
    return logits.data


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean of -log softmax(logits)[label] over the batch."""
    return float(ad.cross_entropy(ad.Var(logits), labels).data)


def loss(spec: ModelSpec, w: np.ndarray, batch: np.ndarray, labels: np.ndarray) -> float:
    logits, _ = _forward_graph(spec, w, batch)
    return float(ad.cross_entropy(logits, labels).data)


def backward(spec: ModelSpec, w: np.ndarray, batch: np.ndarray,
             labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean batch loss and its exact gradient, flattened in layout order."""
    logits, params = _forward_graph(spec, w, batch)
    out = ad.cross_entropy(logits, labels)
    out.backward()
    g = flatten([p.grad if p.grad is not None else np.zeros_like(p.data) for p in params])
    return float(out.data), g


def accuracy(spec: ModelSpec, w: np.ndarray, batch: np.ndarray, labels: np.ndarray) -> float:
    logits = forward(spec, w, batch)
    return float(np.mean(logits.argmax(axis=1) == np.asarray(labels)))
