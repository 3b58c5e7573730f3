"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations record onto an active :class:`Tape`; :func:`backward` replays the
record in reverse and accumulates vector-Jacobian products into the ``grad``
buffers of leaf values. Without an active tape, operations just compute
forward values, which keeps inference cheap.
"""

from __future__ import annotations

import threading
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class GradientError(RuntimeError):
    """Misuse of the differentiation contract (non-scalar loss, reused tape, ...)."""


class _TapeState(threading.local):
    # one active record per thread, so independent fold runs can train in parallel
    active: "Tape | None" = None


_STATE = _TapeState()


class Tape:
    """Ordered record of primitive applications, consumed by one backward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self):
        if _STATE.active is not None:
            raise GradientError("a tape is already active; records do not nest")
        _STATE.active = self
        return self

    def __exit__(self, *exc):
        _STATE.active = None
        return False


class _Node:
    __slots__ = ("tape", "inputs", "out", "vjp")

    def __init__(self, tape, inputs, out, vjp):
        self.tape = tape
        self.inputs = inputs
        self.out = out
        self.vjp = vjp


class Value:
    """Dense float64 tensor with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; every route goes through the recording helpers below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return negate(self)

    def __getitem__(self, key):
        return getitem(self, key)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _record(inputs: Sequence[Value], out_data: np.ndarray, vjp) -> Value:
    """Wrap ``out_data`` and register the node if a tape is recording."""
    tape = _STATE.active
    out = Value(out_data)
    if tape is not None and any(v.requires_grad for v in inputs):
        out.requires_grad = True
        node = _Node(tape, tuple(inputs), out, vjp)
        out._node = node
        tape.nodes.append(node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``g`` back to ``shape`` by summing over broadcast axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and broadcasting primitives


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = a.data + b.data
    return _record(
        (a, b), out,
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = a.data - b.data
    return _record(
        (a, b), out,
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = a.data * b.data
    return _record(
        (a, b), out,
        lambda g: (_unbroadcast(g * b.data, a.data.shape),
                   _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    out = a.data / b.data
    return _record(
        (a, b), out,
        lambda g: (_unbroadcast(g / b.data, a.data.shape),
                   _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
    )


def negate(a) -> Value:
    a = as_value(a)
    return _record((a,), -a.data, lambda g: (-g,))


def exp(a) -> Value:
    a = as_value(a)
    out = np.exp(a.data)
    return _record((a,), out, lambda g: (g * out,))


def log(a) -> Value:
    a = as_value(a)
    return _record((a,), np.log(a.data), lambda g: (g / a.data,))


def square(a) -> Value:
    a = as_value(a)
    return _record((a,), a.data * a.data, lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Value:
    a = as_value(a)
    out = np.sqrt(a.data)
    return _record((a,), out, lambda g: (g / (2.0 * out),))


def relu(a) -> Value:
    a = as_value(a)
    out = np.maximum(a.data, 0.0)
    # Subgradient 0 at exactly 0: mask is strict.
    return _record((a,), out, lambda g: (g * (a.data > 0.0),))


# ---------------------------------------------------------------------------
# linear algebra and structure


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    return _record((a, b), out, vjp)


def sum_reduce(a, axis=None, keepdims: bool = False) -> Value:
    a = as_value(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record((a,), out, vjp)


def max_reduce_with_index(a, axis: int):
    """Max along ``axis`` plus argmax indices; the gradient routes to the
    first maximal entry only."""
    a = as_value(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _record((a,), out, vjp), idx


def concat(values, axis: int = 0) -> Value:
    values = [as_value(v) for v in values]
    out = np.concatenate([v.data for v in values], axis=axis)
    sizes = [v.data.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(tuple(values), out, vjp)


def getitem(a, key) -> Value:
    """Basic slicing/indexing; overlapping (advanced) selection goes through take()."""
    a = as_value(a)
    out = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _record((a,), np.array(out, copy=True), vjp)


def take(a, indices, axis: int = 0) -> Value:
    """Gather along ``axis``; duplicate indices accumulate in the backward pass."""
    a = as_value(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)

    def vjp(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _record((a,), out, vjp)


def broadcast_to(a, shape) -> Value:
    a = as_value(a)
    out = np.broadcast_to(a.data, shape).copy()
    return _record((a,), out, lambda g: (_unbroadcast(g, a.data.shape),))


def reshape(a, shape) -> Value:
    a = as_value(a)
    out = a.data.reshape(shape)
    return _record((a,), np.array(out, copy=True), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes=None) -> Value:
    a = as_value(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return _record((a,), np.array(out, copy=True), vjp)


# ---------------------------------------------------------------------------
# stabilized reductions and loss


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Value:
    """log(sum(exp(a))) along ``axis``, computed in shifted form."""
    a = as_value(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = np.exp(a.data - shift)
    denom = e.sum(axis=axis, keepdims=True)
    out = np.log(denom) + shift
    soft = e / denom
    if not keepdims:
        out = out.squeeze(axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _record((a,), out, vjp)


def softmax_cross_entropy(logits, label: int) -> Value:
    """Cross-entropy of softmax(logits) against an integer class; scalar loss."""
    logits = as_value(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"logits must be a vector, got shape {logits.data.shape}")
    label = int(label)
    if not 0 <= label < logits.data.shape[0]:
        raise ShapeError(f"label {label} out of range for {logits.data.shape[0]} classes")
    shift = logits.data.max()
    e = np.exp(logits.data - shift)
    z = e.sum()
    out = np.log(z) + shift - logits.data[label]
    soft = e / z

    def vjp(g):
        grad = soft * g
        grad[label] -= g
        return (grad,)

    return _record((logits,), np.float64(out), vjp)


def custom(inputs: Sequence, out_data: np.ndarray, vjp) -> Value:
    """Register a fused operation with a caller-supplied backward rule.

    ``vjp(g)`` must return one gradient per input, aligned positionally
    (None allowed for inputs that do not require gradients).
    """
    inputs = tuple(as_value(v) for v in inputs)
    return _record(inputs, np.asarray(out_data, dtype=np.float64), vjp)


# ---------------------------------------------------------------------------
# backward


def backward(loss: Value) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``."""
    if not isinstance(loss, Value) or not loss.requires_grad or loss._node is None:
        raise GradientError("backward needs a value produced within an active record")
    if loss.data.ndim != 0:
        raise GradientError(f"loss must be scalar, got shape {loss.data.shape}")
    tape = loss._node.tape
    if tape.consumed:
        raise GradientError("record already consumed by a previous backward")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        holders.pop(id(node.out), None)
        if g is None:
            continue
        input_grads = node.vjp(g)
        for v, gv in zip(node.inputs, input_grads):
            if gv is None or not v.requires_grad:
                continue
            gv = np.asarray(gv, dtype=np.float64)
            if v._node is not None and v._node.tape is tape:
                key = id(v)
                if key in grads:
                    grads[key] = grads[key] + gv
                else:
                    grads[key] = gv
                    holders[key] = v
            else:
                # Leaf (or value from another record): accumulate in place.
                v.grad += gv
