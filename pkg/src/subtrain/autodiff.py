"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Var`` wraps one ndarray and remembers how it was produced; calling
``backward`` on a scalar result walks the recorded graph in reverse
topological order and accumulates gradients into every reachable ``Var``.
Only the handful of ops a feed-forward classifier needs are provided.
"""

from __future__ import annotations

import numpy as np

from .errors import LabelError, ShapeError


class Var:
    """One node of the tape: an array value plus its local backward rule."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def backward(self):
        if self.data.ndim != 0:
            raise ShapeError("backward() requires a scalar root")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _accum(var: Var, g: np.ndarray) -> None:
    if var.grad is None:
        var.grad = g.copy()
    else:
        var.grad += g


def matmul(a: Var, b: Var) -> Var:
    """a @ b for 2-D operands."""
    out = Var(a.data @ b.data, (a, b))

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._backward = backward
    return out


def add_bias(x: Var, b: Var) -> Var:
    """x + b with b broadcast over the leading (batch) axis."""
    out = Var(x.data + b.data, (x, b))

    def backward(g):
        _accum(x, g)
        _accum(b, g.sum(axis=0))

    out._backward = backward
    return out


def linear(x: Var, w: Var, b: Var) -> Var:
    """x @ w.T + b with w shaped (fan_out, fan_in)."""
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear: input width {x.data.shape[1]} != fan_in {w.data.shape[1]}")
    out = Var(x.data @ w.data.T + b.data, (x, w, b))

    def backward(g):
        _accum(x, g @ w.data)
        _accum(w, g.T @ x.data)
        _accum(b, g.sum(axis=0))

    out._backward = backward
    return out


def relu(x: Var) -> Var:
    out = Var(np.maximum(x.data, 0.0), (x,))

    def backward(g):
        _accum(x, g * (x.data > 0))

    out._backward = backward
    return out


def tanh(x: Var) -> Var:
    out = Var(np.tanh(x.data), (x,))

    def backward(g):
        _accum(x, g * (1.0 - out.data * out.data))

    out._backward = backward
    return out


def conv2d(x: Var, w: Var, b: Var, stride: int) -> Var:
    """Valid cross-correlation: x (N,C,H,W), w (F,C,k,k), b (F,)."""
    n, c, h, wd = x.data.shape
    f, cw, k, k2 = w.data.shape
    if cw != c or k != k2:
        raise ShapeError(f"conv kernel {w.data.shape} does not match input channels {c}")
    if h < k or wd < k:
        raise ShapeError(f"input {h}x{wd} smaller than kernel {k}")
    ho = (h - k) // stride + 1
    wo = (wd - k) // stride + 1

    # im2col: (N, Ho, Wo, C, k, k) patch tensor, flattened per output pixel
    win = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]            # (N, C, Ho, Wo, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wmat = w.data.reshape(f, c * k * k)
    out_data = (cols @ wmat.T + b.data).reshape(n, ho, wo, f).transpose(0, 3, 1, 2)
    out = Var(out_data, (x, w, b))

    def backward(g):
        gcol = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, f)
        _accum(w, (gcol.T @ cols).reshape(f, c, k, k))
        _accum(b, gcol.sum(axis=0))
        dcols = (gcol @ wmat).reshape(n, ho, wo, c, k, k)
        dx = np.zeros_like(x.data)
        # scatter patch gradients back; k is small so the loop is cheap
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        _accum(x, dx)

    out._backward = backward
    return out


def flatten_batch(x: Var) -> Var:
    """Collapse all but the leading axis."""
    n = x.data.shape[0]
    out = Var(x.data.reshape(n, -1), (x,))

    def backward(g):
        _accum(x, g.reshape(x.data.shape))

    out._backward = backward
    return out


def cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Mean softmax cross-entropy, stabilized by max subtraction."""
    z = logits.data
    if z.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {z.shape}")
    labels = np.asarray(labels)
    n, classes = z.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise LabelError(f"labels must lie in [0, {classes})")

    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1)) + zmax[:, 0]
    losses = lse - z[np.arange(n), labels]
    out = Var(losses.mean(), (logits,))

    def backward(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        _accum(logits, g * p / n)

    out._backward = backward
    return out
