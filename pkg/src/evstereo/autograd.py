"""Reverse-mode automatic differentiation over dense numpy tensors.

The engine is eager: every primitive computes its result immediately and,
when gradients are enabled, records an entry on a thread-local tape.
``backward`` replays the tape in exact reverse execution order and frees it
afterwards, so each tape describes a single forward graph.

Training and gradient checking run in float64 (see ``DEFAULT_DTYPE``);
inference may down-cast externally.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN/Inf while nan-checking is active."""


class _EngineState(threading.local):
    def __init__(self):
        self.tape: list[TapeEntry] = []
        self.grad_enabled: bool = True
        self.nan_check: bool = False


_state = _EngineState()


class TapeEntry:
    """One executed op: its inputs, its output, and the backward rule."""

    __slots__ = ("inputs", "output", "backward_fn", "name")

    def __init__(self, inputs, output, backward_fn, name):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn
        self.name = name


class no_grad:
    """Context manager disabling tape recording (inference / FD probes)."""

    def __enter__(self):
        self._prev = _state.grad_enabled
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class nan_check:
    """Context manager that makes every op validate finiteness of its output."""

    def __enter__(self):
        self._prev = _state.nan_check
        _state.nan_check = True
        return self

    def __exit__(self, *exc):
        _state.nan_check = self._prev
        return False


def grad_enabled() -> bool:
    return _state.grad_enabled


def tape_size() -> int:
    return len(_state.tape)


def clear_tape() -> None:
    _state.tape.clear()


class Tensor:
    """Dense N-d array with optional participation in the gradient tape.

    ``data`` is always a contiguous numpy array. ``grad`` is populated by
    ``backward`` for every tensor with ``requires_grad=True`` that the loss
    reaches.
    """

    __slots__ = ("data", "requires_grad", "grad", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = op

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, op="detach")

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_scalar(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method sugar for module-level ops -----------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return abs_(self)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def backward(self):
        backward(self)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def record(output: Tensor, inputs: Sequence[Tensor],
           backward_fn: Callable[[np.ndarray], Iterable[Optional[np.ndarray]]],
           name: str) -> Tensor:
    """Attach ``output`` to the active tape if gradients are flowing."""
    if _state.nan_check and not np.all(np.isfinite(output.data)):
        raise NonFiniteError(f"op '{name}' produced non-finite values")
    if _state.grad_enabled and any(t.requires_grad for t in inputs):
        output.requires_grad = True
        output.op = name
        _state.tape.append(TapeEntry(tuple(inputs), output, backward_fn, name))
    return output


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor the loss reaches.

    The tape is traversed in exact reverse execution order, which is a valid
    topological order for an eagerly-built graph, then freed.
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    tape = _state.tape
    loss.grad = np.ones_like(loss.data)
    try:
        for entry in reversed(tape):
            g = entry.output.grad
            if g is None:
                continue
            input_grads = entry.backward_fn(g)
            for t, ig in zip(entry.inputs, input_grads):
                if ig is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.ascontiguousarray(ig)
                else:
                    t.grad = t.grad + ig
    finally:
        tape.clear()


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return record(out, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    return record(out, (a,), lambda g: (-g,), "neg")


def pow_scalar(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data ** exponent)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return record(out, (a,), bw, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    return record(out, (a,), lambda g: (g * out.data,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data))
    return record(out, (a,), lambda g: (g / a.data,), "log")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.abs(a.data))
    return record(out, (a,), lambda g: (g * np.sign(a.data),), "abs")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))
    inside = (a.data > lo) & (a.data < hi)

    def bw(g):
        return (g * inside,)

    return record(out, (a,), bw, "clamp")


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; cond is a constant mask."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = Tensor(np.where(cond, a.data, b.data))

    def bw(g):
        return (_unbroadcast(g * cond, a.shape),
                _unbroadcast(g * ~cond, b.shape))

    return record(out, (a, b), bw, "where")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))
    positive = a.data > 0

    def bw(g):
        return (g * positive,)

    return record(out, (a,), bw, "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s)

    def bw(g):
        return (g * s * (1.0 - s),)

    return record(out, (a,), bw, "sigmoid")


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * s)

    def bw(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return record(out, (a,), bw, "silu")


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    negative = a.data < 0
    out_data = np.where(negative, alpha * np.expm1(a.data), a.data)
    out = Tensor(out_data)

    def bw(g):
        return (g * np.where(negative, out_data + alpha, 1.0),)

    return record(out, (a,), bw, "elu")


def softmax(a, axis: int) -> Tensor:
    """Numerically-stabilized softmax along ``axis``."""
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def bw(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return ((g - dot) * p,)

    return record(out, (a,), bw, "softmax")


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis=axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return record(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.size if axis is None else a.data.size // out.size

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis=axis)
        return (np.broadcast_to(g_exp / count, a.shape).copy(),)

    return record(out, (a,), bw, "mean")


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def bw(g):
        return (g.reshape(a.shape),)

    return record(out, (a,), bw, "reshape")


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    inverse = np.argsort(axes)

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return record(out, (a,), bw, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        grads = []
        for i in range(len(tensors)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(index)])
        return grads

    return record(out, tuple(tensors), bw, "concat")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data[index])

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return record(out, (a,), bw, "getitem")


def matmul(a, b) -> Tensor:
    """Matrix product for 2-d operands or equal-batch stacked matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or (a.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise ValueError(f"matmul batch dims must match: {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return record(out, (a, b), bw, "matmul")
