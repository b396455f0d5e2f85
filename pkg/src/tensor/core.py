"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active record a backward rule for
every output that depends on a tensor with ``requires_grad``. Replaying the
tape in reverse recording order accumulates gradients into the leaf tensors.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
Axes = Union[None, int, Sequence[int]]


class TapeError(RuntimeError):
    """Raised when a backward pass cannot be replayed."""


class Tensor:
    """
    Row-major float64 array with optional gradient tracking.

    Tensors are treated as immutable once created; every operation returns a
    new tensor holding its own copy of the data.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(array, dtype=np.float64, order="C")
        out.requires_grad = requires_grad
        out.grad = None
        out._tape = None
        return out

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy(), False)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if self._tape is None:
            raise TapeError("tensor was not produced on a recording tape")
        self._tape.backward(self, grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; every method dispatches to a module-level primitive.
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

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sum(self, axes: Axes = None, keepdims: bool = False) -> "Tensor":
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes: Axes = None, keepdims: bool = False) -> "Tensor":
        return reduce("mean", self, axes, keepdims)

    def max(self, axes: Axes = None, keepdims: bool = False) -> "Tensor":
        return reduce("max", self, axes, keepdims)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes: Optional[Sequence[int]] = None) -> "Tensor":
        return transpose(self, axes)


@dataclass
class _Record:
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    rule: BackwardRule


class Tape:
    """
    Ordered log of recorded operations, replayed once in reverse by ``backward``.

    Use as a context manager; tapes are thread-local so disjoint forward passes
    may be recorded concurrently on different threads.
    """

    _local = threading.local()

    def __init__(self):
        self.records: List[_Record] = []
        self.consumed = False

    @classmethod
    def active(cls) -> Optional["Tape"]:
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __enter__(self) -> "Tape":
        if not hasattr(Tape._local, "stack"):
            Tape._local.stack = []
        Tape._local.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, name: str, inputs: Tuple[Tensor, ...], output: Tensor, rule: BackwardRule) -> None:
        if self.consumed:
            raise TapeError("cannot record onto a tape that was already replayed")
        self.records.append(_Record(name, inputs, output, rule))
        output._tape = self

    def backward(self, output: Tensor, grad: Optional[np.ndarray] = None) -> None:
        """
        Replay the tape from ``output`` and accumulate leaf gradients.

        Args:
            output: Tensor recorded on this tape (scalar unless ``grad`` is given)
            grad: Seed gradient with the shape of ``output``
        """
        if self.consumed:
            raise TapeError("tape already consumed; record the forward pass again")
        if output._tape is not self:
            raise TapeError("output tensor was not recorded on this tape")
        if grad is None:
            if output.size != 1:
                raise TapeError(f"backward from non-scalar output of shape {output.shape} needs a seed gradient")
            grad = np.ones_like(output.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != output.shape:
            raise ValueError(f"seed gradient shape {grad.shape} != output shape {output.shape}")

        self.consumed = True
        grads = {id(output): grad}
        tensors = {id(output): output}

        for record in reversed(self.records):
            g = grads.pop(id(record.output), None)
            if g is None:
                continue
            input_grads = record.rule(g)
            for tensor, g_in in zip(record.inputs, input_grads):
                if g_in is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                tensors[key] = tensor
                grads[key] = grads[key] + g_in if key in grads else g_in

        for key, g in grads.items():
            tensor = tensors[key]
            if not tensor.is_leaf:
                continue
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g

        logger.debug(f"Replayed tape with {len(self.records)} records")
        self.records = []


# ---------------------------------------------------------------------------
# recording helpers


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(name: str, data: np.ndarray, inputs: Tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    if not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"{name} produced non-finite values from finite inputs (overflow)")
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad)
    tape = Tape.active()
    if requires_grad and tape is not None:
        tape.record(name, inputs, out, rule)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back to the pre-broadcast input shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return np.asarray(grad).reshape(shape)


def _broadcast_shape(name: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _normalize_axes(axes: Axes, ndim: int) -> Tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ValueError(f"axis {axis} out of range for rank {ndim}")
        normalized.append(axis % ndim)
    return tuple(sorted(set(normalized)))


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    if np.any(b.data == 0.0):
        raise ValueError("div: division by zero")
    out = a.data / b.data
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: argument must be strictly positive")
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    if not exponent.is_integer() and np.any(a.data < 0.0):
        raise ValueError("power: negative base with non-integer exponent")
    if exponent < 0 and np.any(a.data == 0.0):
        raise ValueError("power: zero base with negative exponent")
    with np.errstate(over="ignore"):
        out = np.power(a.data, exponent)
    return _emit("power", out, (a,), lambda g: (g * exponent * np.power(a.data, exponent - 1.0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return _emit("softplus", np.logaddexp(0.0, a.data), (a,), lambda g: (g * expit(a.data),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    return _emit("silu", a.data * s, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


_UNARY = {"exp": exp, "log": log, "sigmoid": sigmoid, "softplus": softplus, "silu": silu, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b=None) -> Tensor:
    """
    Dispatch an elementwise primitive by name.

    Args:
        kind: One of add, sub, mul, div, power, exp, log, sigmoid, softplus, silu, neg
        a: First operand
        b: Second operand (the scalar exponent for ``power``)

    Returns:
        Elementwise result
    """
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind == "power":
        return power(a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    raise ValueError(f"unknown elementwise op: {kind}")


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Tensor:
    """
    Product of ``a`` (..., k) with a matrix ``b`` (k, n).

    Leading axes of ``a`` are treated as rows, so a batch of feature maps can be
    projected channel-wise in one call.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2:
        raise ValueError(f"matmul expects a (..., k) and b (k, n), got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def rule(g):
        grad_a = g @ b.data.T
        grad_b = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return grad_a, grad_b

    return _emit("matmul", a.data @ b.data, (a, b), rule)


def reduce(kind: str, a, axes: Axes = None, keepdims: bool = False) -> Tensor:
    """
    Sum, mean or max over ``axes``.

    Max routes the gradient to the first maximal element along the reduced axes.
    """
    a = as_tensor(a)
    axes = _normalize_axes(axes, a.ndim)
    if any(a.shape[axis] == 0 for axis in axes):
        raise ValueError(f"{kind}: cannot reduce over an empty axis of shape {a.shape}")
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
    count = int(np.prod([a.shape[axis] for axis in axes])) if axes else 1

    if kind == "sum":
        out = a.data.sum(axis=axes, keepdims=True)

        def rule(g):
            return (np.broadcast_to(g.reshape(kept_shape), a.shape).copy(),)
    elif kind == "mean":
        out = a.data.mean(axis=axes, keepdims=True)

        def rule(g):
            return (np.broadcast_to(g.reshape(kept_shape) / count, a.shape).copy(),)
    elif kind == "max":
        moved = np.moveaxis(a.data, axes, tuple(range(a.ndim - len(axes), a.ndim)))
        flat = moved.reshape(moved.shape[:a.ndim - len(axes)] + (-1,))
        winner = flat.argmax(axis=-1)
        out = a.data.max(axis=axes, keepdims=True)

        def rule(g):
            grad_flat = np.zeros_like(flat)
            np.put_along_axis(grad_flat, winner[..., None], g.reshape(winner.shape + (1,)), axis=-1)
            grad_moved = grad_flat.reshape(moved.shape)
            return (np.moveaxis(grad_moved, tuple(range(a.ndim - len(axes), a.ndim)), axes),)
    else:
        raise ValueError(f"unknown reduction: {kind}")

    if not keepdims:
        out = out.reshape(tuple(n for i, n in enumerate(a.shape) if i not in axes))
    return _emit(kind, out, (a,), rule)


def argmax(a, axis: int = -1) -> np.ndarray:
    """Indices of the first maximum along ``axis``; never differentiated."""
    data = a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)
    if data.shape[axis] == 0:
        raise ValueError("argmax over an empty axis")
    return data.argmax(axis=axis)


# ---------------------------------------------------------------------------
# structural operations


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _emit("reshape", out.copy(), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(a.data, axes).copy(), (a,), lambda g: (np.transpose(g, inverse),))


def take(a, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; the backward rule scatter-adds into the source positions."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    if indices.size and (indices.min() < 0 or indices.max() >= a.shape[axis]):
        raise ValueError(f"take: indices out of range for axis {axis} of extent {a.shape[axis]}")
    out = np.take(a.data, indices, axis=axis)

    def rule(g):
        grad = np.zeros(a.shape)
        moved_grad = np.moveaxis(grad, axis, 0)
        np.add.at(moved_grad, indices, np.moveaxis(g, axis, 0))
        return (grad,)

    return _emit("take", out, (a,), rule)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    axis = axis % tensors[0].ndim
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ValueError(f"concat: {e}")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", out, tensors, rule)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    """Stack equally shaped tensors along a new non-negative ``axis``."""
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def stop_gradient(a) -> Tensor:
    return as_tensor(a).detach()


# ---------------------------------------------------------------------------
# composite operations


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shift = stop_gradient(reduce("max", a, axis, keepdims=True))
    shifted = a - shift
    return shifted - log(reduce("sum", exp(shifted), axis, keepdims=True))


def softmax(a, axis: int = -1) -> Tensor:
    return exp(log_softmax(a, axis))


def layernorm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance, then apply gain and bias."""
    if eps <= 0:
        raise ValueError("layernorm: eps must be positive")
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    if gain.shape != (a.shape[-1],) or bias.shape != (a.shape[-1],):
        raise ValueError(f"layernorm: gain/bias must have shape ({a.shape[-1]},)")
    centered = a - reduce("mean", a, -1, keepdims=True)
    variance = reduce("mean", centered * centered, -1, keepdims=True)
    return centered * power(variance + eps, -0.5) * gain + bias


def depthwise_conv2d(a, kernels) -> Tensor:
    """
    Per-channel 3x3 correlation with zero 'same' padding.

    Args:
        a: Input of shape (..., H, W, C)
        kernels: Kernels of shape (3, 3, C)

    Returns:
        Output of shape (..., H, W, C)
    """
    a, kernels = as_tensor(a), as_tensor(kernels)
    if a.ndim < 3:
        raise ValueError(f"depthwise_conv2d expects (..., H, W, C), got {a.shape}")
    if kernels.shape != (3, 3, a.shape[-1]):
        raise ValueError(f"depthwise_conv2d: kernels {kernels.shape} do not match channels {a.shape[-1]}")
    height, width = a.shape[-3], a.shape[-2]
    pad = [(0, 0)] * (a.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    padded = np.pad(a.data, pad)

    out = np.zeros(a.shape)
    for di in range(3):
        for dj in range(3):
            out += padded[..., di:di + height, dj:dj + width, :] * kernels.data[di, dj]

    def rule(g):
        grad_padded = np.zeros(padded.shape)
        grad_k = np.zeros(kernels.shape)
        lead = tuple(range(a.ndim - 1))
        for di in range(3):
            for dj in range(3):
                window = padded[..., di:di + height, dj:dj + width, :]
                grad_k[di, dj] = (window * g).sum(axis=lead)
                grad_padded[..., di:di + height, dj:dj + width, :] += g * kernels.data[di, dj]
        return grad_padded[..., 1:height + 1, 1:width + 1, :], grad_k

    return _emit("depthwise_conv2d", out, (a, kernels), rule)


def custom_op(name: str, data: np.ndarray, inputs: Sequence[Tensor], rule: BackwardRule) -> Tensor:
    """Record a fused operation whose backward rule is supplied by the caller."""
    return _emit(name, data, tuple(inputs), rule)
