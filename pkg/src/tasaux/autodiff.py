"""Minimal reverse-mode autodiff over dense float64 arrays.

Only the primitives the dilated TCN needs are provided. Every primitive records
a node on the active :class:`Tape` with whatever it must save for its adjoint;
:func:`backward` walks the tape in reverse and accumulates gradients.

Tensors are ``C x T`` (channels by frames) unless stated otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotScalarLoss(ValueError):
    pass


class Tensor:
    __slots__ = ("values", "node_id", "tape", "requires_grad", "name")

    def __init__(self, values, *, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.node_id: int | None = None
        self.tape: Tape | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, node={self.node_id})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return scale(self, other)

    __rmul__ = __mul__


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    adjoint: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Tape:
    nodes: list[_Node] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)
    gradients: dict[int, np.ndarray] = field(default_factory=dict)

    def leaf(self, values, name: str | None = None) -> Tensor:
        """Register a differentiable input. Arrays are wrapped without copying."""
        if isinstance(values, Tensor):
            name = name or values.name
            values = values.values
        t = Tensor(values, requires_grad=True, name=name)
        t.tape = self
        t.node_id = -(len(self.leaves) + 1)
        self.leaves.append(t)
        return t

    def record(self, op: str, inputs: tuple[Tensor, ...], out_values: np.ndarray, adjoint) -> Tensor:
        out = Tensor(out_values)
        if any(x.tape is self and x.requires_grad for x in inputs):
            out.tape = self
            out.requires_grad = True
            out.node_id = len(self.nodes)
            self.nodes.append(_Node(op, inputs, out, adjoint))
        return out

    def grad(self, t: Tensor) -> np.ndarray:
        g = self.gradients.get(t.node_id) if t.tape is self else None
        return np.zeros_like(t.values) if g is None else g


def _tape_of(*xs: Tensor) -> Tape:
    for x in xs:
        if x.tape is not None:
            return x.tape
    return _DETACHED


# records nothing; lets forward passes run without a tape
_DETACHED = Tape()


def _require(cond: bool, msg: str):
    if not cond:
        raise ShapeMismatch(msg)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, f"add: {a.shape} vs {b.shape}")
    return _tape_of(a, b).record("add", (a, b), a.values + b.values, lambda g: (g, g))


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _tape_of(a).record("scale", (a,), a.values * k, lambda g: (g * k,))


def relu(x: Tensor) -> Tensor:
    pos = x.values > 0
    return _tape_of(x).record("relu", (x,), np.where(pos, x.values, 0.0), lambda g: (g * pos,))


def multiply_mask(x: Tensor, mask: np.ndarray) -> Tensor:
    """Elementwise product with a constant array, e.g. a scaled dropout mask."""
    mask = np.asarray(mask, dtype=np.float64)
    _require(mask.shape == x.shape, f"multiply_mask: mask {mask.shape} vs input {x.shape}")
    return _tape_of(x).record("multiply_mask", (x,), x.values * mask, lambda g: (g * mask,))


def pointwise_conv(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution: ``W @ x + b[:, None]`` with ``W`` of shape ``(out, in)``."""
    _require(x.values.ndim == 2 and weights.values.ndim == 2, "pointwise_conv expects 2-D operands")
    _require(weights.shape[1] == x.shape[0], f"pointwise_conv: weights {weights.shape} vs input {x.shape}")
    out = weights.values @ x.values
    inputs: tuple[Tensor, ...] = (x, weights)
    if bias is not None:
        _require(bias.shape == (weights.shape[0],), f"pointwise_conv: bias {bias.shape} vs weights {weights.shape}")
        out = out + bias.values[:, None]
        inputs = inputs + (bias,)
    xv, wv = x.values, weights.values

    def adjoint(g):
        grads = (wv.T @ g, g @ xv.T)
        return grads + ((g.sum(axis=1),) if bias is not None else ())

    return _tape_of(*inputs).record("pointwise_conv", inputs, out, adjoint)


def conv1d_dilated(x: Tensor, kernel: Tensor, dilation: int, bias: Tensor | None = None) -> Tensor:
    """Dilated 1-D convolution with zero same-padding, so T is preserved.

    ``kernel`` has shape ``(out, in, K)`` with odd ``K``; tap ``k`` reads frame
    ``t + (k - K // 2) * dilation``.
    """
    _require(dilation >= 1, f"dilation must be >= 1, got {dilation}")
    _require(kernel.values.ndim == 3 and kernel.shape[2] % 2 == 1, f"kernel must be (out, in, odd K), got {kernel.shape}")
    _require(x.values.ndim == 2 and kernel.shape[1] == x.shape[0], f"conv1d_dilated: kernel {kernel.shape} vs input {x.shape}")
    c_out, c_in, K = kernel.shape
    T = x.shape[1]
    pad = (K // 2) * dilation
    xp = np.zeros((c_in, T + 2 * pad))
    xp[:, pad:pad + T] = x.values
    cols = np.concatenate([xp[:, k * dilation:k * dilation + T] for k in range(K)], axis=0)
    w2 = kernel.values.transpose(0, 2, 1).reshape(c_out, K * c_in)
    out = w2 @ cols
    inputs: tuple[Tensor, ...] = (x, kernel)
    if bias is not None:
        _require(bias.shape == (c_out,), f"conv1d_dilated: bias {bias.shape} vs out channels {c_out}")
        out = out + bias.values[:, None]
        inputs = inputs + (bias,)

    def adjoint(g):
        g_cols = w2.T @ g
        g_xp = np.zeros_like(xp)
        for k in range(K):
            g_xp[:, k * dilation:k * dilation + T] += g_cols[k * c_in:(k + 1) * c_in]
        g_w = (g @ cols.T).reshape(c_out, K, c_in).transpose(0, 2, 1)
        grads = (g_xp[:, pad:pad + T], g_w)
        return grads + ((g.sum(axis=1),) if bias is not None else ())

    return _tape_of(*inputs).record("conv1d_dilated", inputs, out, adjoint)


def softmax_columns(x: Tensor) -> Tensor:
    e = np.exp(x.values - x.values.max(axis=0, keepdims=True))
    p = e / e.sum(axis=0, keepdims=True)
    return _tape_of(x).record(
        "softmax_columns", (x,), p, lambda g: (p * (g - (p * g).sum(axis=0, keepdims=True)),)
    )


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    return _tape_of(x).record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def gather_rows(x: Tensor, rows) -> Tensor:
    idx = np.asarray(rows, dtype=np.int64)
    _require(idx.ndim == 1 and (idx.size == 0 or (idx.min() >= 0 and idx.max() < x.shape[0])),
             f"gather_rows: indices out of range for {x.shape}")
    shape = x.shape

    def adjoint(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _tape_of(x).record("gather_rows", (x,), x.values[idx], adjoint)


def total(x: Tensor) -> Tensor:
    """Sum of all entries as a 0-d tensor."""
    shape = x.shape
    return _tape_of(x).record("sum", (x,), np.asarray(x.values.sum()), lambda g: (np.full(shape, float(g)),))


def attach_loss(x: Tensor, value: float, grad: np.ndarray) -> Tensor:
    """Scalar node whose value and gradient with respect to ``x`` were computed outside the tape."""
    grad = np.asarray(grad, dtype=np.float64)
    _require(grad.shape == x.shape, f"attach_loss: grad {grad.shape} vs input {x.shape}")
    return _tape_of(x).record("external_loss", (x,), np.asarray(float(value)), lambda g: (float(g) * grad,))


# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    if loss.values.size != 1 or loss.values.ndim > 1:
        raise NotScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
    tape.gradients = {}
    if loss.tape is not tape:
        return tape.gradients
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
    for node in reversed(tape.nodes[:loss.node_id + 1]):
        g = grads.pop(node.output.node_id, None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.adjoint(g)):
            if gi is None or inp.tape is not tape or not inp.requires_grad:
                continue
            if inp.node_id in grads:
                grads[inp.node_id] = grads[inp.node_id] + gi
            else:
                grads[inp.node_id] = gi
    tape.gradients = {leaf.node_id: grads.get(leaf.node_id, np.zeros_like(leaf.values)) for leaf in tape.leaves}
    return tape.gradients
