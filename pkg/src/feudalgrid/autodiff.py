"""Reverse-mode automatic differentiation over numpy arrays.

Tensors hold float64 data plus an optional gradient buffer.  Operations
execute eagerly and, when a ``Tape`` is active and an input requires
gradients, append a node with a backward rule.  ``backward(loss)`` walks
the tape once in reverse creation order (creation order is topological
by construction) and accumulates gradients additively.

Primitives are registered in ``OPS`` by name; ``primitive_forward``
dispatches through that registry.  Sequence (LSTM) and convolution
kernels live in :mod:`feudalgrid.nn` and register themselves here on
import.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "primitive_forward",
    "backward",
    "set_debug_checks",
    "debug_checks_enabled",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "concat",
    "tslice",
    "reshape",
    "expand",
    "transpose",
    "tanh",
    "sigmoid",
    "relu",
    "softmax",
    "log_softmax",
    "reduce_max",
    "reduce_sum",
    "mean",
    "embedding",
    "embedding_bag",
    "softmax_cross_entropy",
]


class ShapeError(ValueError):
    """Raised when operation inputs have incompatible shapes."""


_state = threading.local()
_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf assertions after every forward/backward value."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


def _check_finite(arr: np.ndarray, context: str) -> None:
    if _DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {context}")


class Tensor:
    """Shape-tagged float64 array participating in a recorded graph."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("op_kind", "inputs", "output", "backward_fn")

    def __init__(self, op_kind, inputs, output, backward_fn):
        self.op_kind = op_kind
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Recorded computation graph, confined to one thread.

    Use as a context manager; ops executed inside record themselves when
    an input requires gradients.  A tape can be consumed by ``backward``
    exactly once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if getattr(_state, "tape", None) is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = None


def active_tape() -> Tape | None:
    return getattr(_state, "tape", None)


def _record(op_kind: str, inputs: Sequence[Tensor], output: Tensor,
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> None:
    _check_finite(output.data, op_kind)
    tape = active_tape()
    if tape is not None and output.requires_grad:
        tape.nodes.append(_Node(op_kind, tuple(inputs), output, backward_fn))


def backward(loss: Tensor, seed_grad: np.ndarray | None = None) -> None:
    """Accumulate gradients of ``loss`` into every reachable tensor.

    The active tape is walked in reverse and marked consumed.  Tensors
    recorded on the tape that require gradients but receive no flow end
    up with an exactly-zero gradient buffer.
    """
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward called with no active Tape")
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward")
    if seed_grad is None:
        if loss.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        seed_grad = np.ones_like(loss.data)
    tape.consumed = True

    loss.accumulate_grad(np.asarray(seed_grad, dtype=np.float64))
    for node in reversed(tape.nodes):
        out_grad = node.output.grad
        if out_grad is None:
            continue
        grads = node.backward_fn(out_grad)
        for tensor, g in zip(node.inputs, grads):
            if g is None or not tensor.requires_grad:
                continue
            _check_finite(g, f"{node.op_kind} backward")
            tensor.accumulate_grad(g)
    # Tensors on the tape with no gradient flow read as exactly zero.
    for node in tape.nodes:
        for tensor in node.inputs + (node.output,):
            if tensor.requires_grad and tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a broadcasted gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, a.requires_grad or b.requires_grad)
    _record("add", (a, b), out,
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, a.requires_grad or b.requires_grad)
    _record("sub", (a, b), out,
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from None
    out = Tensor(data, a.requires_grad or b.requires_grad)
    _record("mul", (a, b), out,
            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))
    return out


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c, a.requires_grad)
    _record("scale", (a,), out, lambda g: (g * c,))
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: inputs must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    data = np.matmul(a.data, b.data)
    out = Tensor(data, a.requires_grad or b.requires_grad)

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    _record("matmul", (a, b), out, bwd)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    out = Tensor(data, any(t.requires_grad for t in tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    _record("concat", tensors, out, bwd)
    return out


def tslice(a, key) -> Tensor:
    """Basic (non-advanced) slicing; gradient scattered back into place."""
    a = _as_tensor(a)
    data = a.data[key]
    out = Tensor(data, a.requires_grad)

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    _record("slice", (a,), out, bwd)
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    out = Tensor(data, a.requires_grad)
    _record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))
    return out


def expand(a, shape) -> Tensor:
    """Broadcast to ``shape``; backward sums over the expanded axes."""
    a = _as_tensor(a)
    try:
        data = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {shape}") from None
    out = Tensor(data, a.requires_grad)
    _record("expand", (a,), out, lambda g: (_unbroadcast(g, a.shape),))
    return out


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(data, a.requires_grad)
    _record("transpose", (a,), out, lambda g: (np.transpose(g, inverse),))
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)
    out = Tensor(data, a.requires_grad)
    _record("tanh", (a,), out, lambda g: (g * (1.0 - data * data),))
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(data, a.requires_grad)
    _record("sigmoid", (a,), out, lambda g: (g * data * (1.0 - data),))
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)
    out = Tensor(data, a.requires_grad)
    _record("relu", (a,), out, lambda g: (g * (a.data > 0.0),))
    return out


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(data, a.requires_grad)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return ((g - dot) * data,)

    _record("softmax", (a,), out, bwd)
    return out


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    out = Tensor(data, a.requires_grad)
    soft = np.exp(data)

    def bwd(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    _record("log_softmax", (a,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def reduce_max(a, axes=None, keepdims: bool = False) -> Tensor:
    """Max-pool over the named axes; ties route gradient to the first max."""
    a = _as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    moved = np.moveaxis(a.data, axes, range(a.ndim - len(axes), a.ndim))
    lead_shape = moved.shape[:a.ndim - len(axes)]
    flat = moved.reshape(lead_shape + (-1,))
    idx = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    kept = data
    if keepdims:
        shape = list(a.shape)
        for ax in axes:
            shape[ax] = 1
        kept = data.reshape(shape)
    out = Tensor(kept, a.requires_grad)

    def bwd(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g.reshape(lead_shape + (1,)), axis=-1)
        gmoved = gflat.reshape(moved.shape)
        return (np.moveaxis(gmoved, range(a.ndim - len(axes), a.ndim), axes),)

    _record("reduce_max", (a,), out, bwd)
    return out


def reduce_sum(a, axes=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    out = Tensor(data, a.requires_grad)

    def bwd(g):
        if not keepdims:
            shape = list(a.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        return (np.broadcast_to(g, a.shape).copy(),)

    _record("reduce_sum", (a,), out, bwd)
    return out


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.size
    out = Tensor(np.asarray(a.data.mean()), a.requires_grad)
    _record("mean", (a,), out, lambda g: (np.broadcast_to(g / n, a.shape).copy(),))
    return out


# ---------------------------------------------------------------------------
# lookups and losses


def embedding(table, ids, pad_zero: bool = True) -> Tensor:
    """Row lookup ``table[ids]``; id 0 (PAD) stays pinned to zero.

    With ``pad_zero`` the forward zeroes PAD rows and the backward
    scatters no gradient into row 0, so the PAD embedding is exactly
    zero for the lifetime of the table.
    """
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table with {table.shape[0]} rows")
    data = table.data[ids]
    if pad_zero:
        data = data * (ids != 0)[..., None]
    out = Tensor(data, table.requires_grad)

    def bwd(g):
        if pad_zero:
            g = g * (ids != 0)[..., None]
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if pad_zero:
            gt[0] = 0.0
        return (gt,)

    _record("embedding", (table,), out, bwd)
    return out


def embedding_bag(table, ids, pad_zero: bool = True) -> Tensor:
    """Bag-of-words lookup: sum of rows over the last axis of ``ids``."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding_bag: table must be 2-D, got {table.shape}")
    rows = table.data[ids]
    if pad_zero:
        rows = rows * (ids != 0)[..., None]
    data = rows.sum(axis=-2)
    out = Tensor(data, table.requires_grad)

    def bwd(g):
        gr = np.broadcast_to(g[..., None, :], ids.shape + (table.shape[1],)).copy()
        if pad_zero:
            gr *= (ids != 0)[..., None]
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), gr.reshape(-1, table.shape[1]))
        if pad_zero:
            gt[0] = 0.0
        return (gt,)

    _record("embedding_bag", (table,), out, bwd)
    return out


def softmax_cross_entropy(logits, targets) -> Tensor:
    """-log softmax(logits)[target] along the last axis.

    ``targets`` is an integer array shaped like ``logits`` minus its
    last axis; the result carries that shape (scalar for a single
    logit vector).
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    k = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(
            f"softmax_cross_entropy: targets shape {targets.shape} does not match "
            f"logits {logits.shape} minus its last axis")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ShapeError(f"softmax_cross_entropy: target out of range for {k} classes")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    out = Tensor(-picked, logits.requires_grad)
    soft = np.exp(logp)

    def bwd(g):
        onehot = np.zeros_like(soft)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return ((soft - onehot) * g[..., None],)

    _record("softmax_cross_entropy", (logits,), out, bwd)
    return out


# ---------------------------------------------------------------------------
# registry

OPS: dict[str, Callable] = {
    "add": lambda inputs, attrs: add(*inputs),
    "sub": lambda inputs, attrs: sub(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "scale": lambda inputs, attrs: scale(inputs[0], attrs["value"]),
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "concat": lambda inputs, attrs: concat(inputs, attrs["axis"]),
    "slice": lambda inputs, attrs: tslice(inputs[0], attrs["key"]),
    "reshape": lambda inputs, attrs: reshape(inputs[0], attrs["shape"]),
    "expand": lambda inputs, attrs: expand(inputs[0], attrs["shape"]),
    "transpose": lambda inputs, attrs: transpose(inputs[0], attrs["axes"]),
    "tanh": lambda inputs, attrs: tanh(inputs[0]),
    "sigmoid": lambda inputs, attrs: sigmoid(inputs[0]),
    "relu": lambda inputs, attrs: relu(inputs[0]),
    "softmax": lambda inputs, attrs: softmax(inputs[0], attrs.get("axis", -1)),
    "log_softmax": lambda inputs, attrs: log_softmax(inputs[0], attrs.get("axis", -1)),
    "reduce_max": lambda inputs, attrs: reduce_max(
        inputs[0], attrs.get("axes"), attrs.get("keepdims", False)),
    "reduce_sum": lambda inputs, attrs: reduce_sum(
        inputs[0], attrs.get("axes"), attrs.get("keepdims", False)),
    "mean": lambda inputs, attrs: mean(inputs[0]),
    "embedding": lambda inputs, attrs: embedding(
        inputs[0], attrs["ids"], attrs.get("pad_zero", True)),
    "embedding_bag": lambda inputs, attrs: embedding_bag(
        inputs[0], attrs["ids"], attrs.get("pad_zero", True)),
    "softmax_cross_entropy": lambda inputs, attrs: softmax_cross_entropy(
        inputs[0], attrs["targets"]),
}


def primitive_forward(op_kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Dispatch a primitive by name through the op registry."""
    if op_kind not in OPS:
        raise KeyError(f"unknown op_kind {op_kind!r}; known: {sorted(OPS)}")
    return OPS[op_kind](list(inputs), attrs or {})
