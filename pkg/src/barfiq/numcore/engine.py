"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy float64 array and records the operations that
produced it. Calling ``backward()`` on a scalar walks the recorded graph in
reverse topological order and accumulates gradients into every tensor with
``requires_grad`` set.

Conventions:
- everything is float64; inputs are coerced on construction
- operations that can produce NaN/Inf (exp, log, sqrt, div, pow) raise
  ``NonFiniteError`` instead of propagating them silently
- broadcasting follows numpy; gradients are summed back over broadcast axes
"""
from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import erf as _erf, expit as _expit

from ..errors import DomainError, NonFiniteError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation / inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")
    return data


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=track)
        if track:
            out._parents = parents
            out._backward = backward
        return out

    # -- basic introspection --------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff driver ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into the recorded graph."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, grad: np.ndarray) -> None:
        # Accumulation always rebinds (never mutates in place), so sharing
        # array objects or views between nodes is safe.
        self.grad = grad if self.grad is None else self.grad + grad

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = _coerce(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor._from_op(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))

        return Tensor._from_op(self.data - other.data, (self, other), backward)

    def __rsub__(self, other):
        return _coerce(other) - self

    def __neg__(self):
        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)

        return Tensor._from_op(-self.data, (self,), backward)

    def __mul__(self, other):
        other = _coerce(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor._from_op(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)
        with np.errstate(all="ignore"):
            out_data = _check_finite(self.data / other.data, "div")

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.shape)
                )

        return Tensor._from_op(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return _coerce(other) / self

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise ShapeError("pow supports scalar exponents only")
        with np.errstate(all="ignore"):
            out_data = _check_finite(self.data ** exponent, "pow")

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * exponent * self.data ** (exponent - 1))

        return Tensor._from_op(out_data, (self,), backward)

    def __matmul__(self, other):
        other = _coerce(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError("matmul requires tensors with at least 2 dimensions")

        def backward(g):
            if self.requires_grad:
                ga = np.matmul(g, np.swapaxes(other.data, -1, -2))
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.matmul(np.swapaxes(self.data, -1, -2), g)
                other._accumulate(_unbroadcast(gb, other.shape))

        return Tensor._from_op(np.matmul(self.data, other.data), (self, other), backward)

    # -- elementwise nonlinearities --------------------------------------------

    def exp(self):
        with np.errstate(all="ignore"):
            out_data = _check_finite(np.exp(self.data), "exp")

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * out_data)

        return Tensor._from_op(out_data, (self,), backward)

    def log(self):
        with np.errstate(all="ignore"):
            out_data = _check_finite(np.log(self.data), "log")

        def backward(g):
            if self.requires_grad:
                self._accumulate(g / self.data)

        return Tensor._from_op(out_data, (self,), backward)

    def sqrt(self):
        with np.errstate(all="ignore"):
            out_data = _check_finite(np.sqrt(self.data), "sqrt")

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * 0.5 / out_data)

        return Tensor._from_op(out_data, (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._from_op(out_data, (self,), backward)

    def sigmoid(self):
        out_data = _expit(self.data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._from_op(out_data, (self,), backward)

    def relu(self):
        out_data = np.maximum(self.data, 0.0)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * (self.data > 0.0))

        return Tensor._from_op(out_data, (self,), backward)

    def elu(self):
        neg = np.expm1(np.minimum(self.data, 0.0))
        out_data = np.where(self.data > 0.0, self.data, neg)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * np.where(self.data > 0.0, 1.0, neg + 1.0))

        return Tensor._from_op(out_data, (self,), backward)

    def silu(self):
        sig = _expit(self.data)
        out_data = self.data * sig

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * sig * (1.0 + self.data * (1.0 - sig)))

        return Tensor._from_op(out_data, (self,), backward)

    def gelu(self):
        inv_sqrt2 = 1.0 / np.sqrt(2.0)
        cdf = 0.5 * (1.0 + _erf(self.data * inv_sqrt2))
        pdf = np.exp(-0.5 * self.data * self.data) / np.sqrt(2.0 * np.pi)
        out_data = self.data * cdf

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * (cdf + self.data * pdf))

        return Tensor._from_op(out_data, (self,), backward)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(gg, axis=axis)
            self._accumulate(np.broadcast_to(gg, self.shape).copy())

        return Tensor._from_op(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.size
        elif isinstance(axis, tuple):
            count = int(np.prod([self.shape[a] for a in axis]))
        else:
            count = self.shape[axis]
        if count == 0:
            raise DomainError("mean over an empty axis")
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis=None, keepdims: bool = False):
        out_data = self.data.max(axis=axis, keepdims=keepdims)

        def backward(g):
            if not self.requires_grad:
                return
            gg, oo = g, out_data
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis=axis)
                oo = np.expand_dims(oo, axis=axis)
            mask = self.data == oo
            counts = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
            self._accumulate(np.where(mask, gg / counts, 0.0))

        return Tensor._from_op(out_data, (self,), backward)

    # -- shape manipulation -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.shape

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(old_shape))

        return Tensor._from_op(self.data.reshape(shape), (self,), backward)

    def swapaxes(self, a: int, b: int):
        def backward(g):
            if self.requires_grad:
                self._accumulate(np.swapaxes(g, a, b))

        return Tensor._from_op(np.swapaxes(self.data, a, b), (self,), backward)

    def __getitem__(self, idx):
        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, idx, g)
                self._accumulate(full)

        return Tensor._from_op(self.data[idx], (self,), backward)


def _coerce(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors: list, axis: int = 0) -> Tensor:
    """Concatenate tensors along ``axis`` (gradient splits back)."""
    if not tensors:
        raise DomainError("concat of an empty list")
    tensors = [_coerce(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                t._accumulate(g[tuple(index)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._from_op(data, tuple(tensors), backward)


def scatter_rows(values: Tensor, rows: np.ndarray, n_rows: int) -> Tensor:
    """Place ``values`` (k, d) at the given row indices of a zero (n_rows, d) tensor."""
    values = _coerce(values)
    data = np.zeros((n_rows,) + values.shape[1:], dtype=np.float64)
    data[rows] = values.data

    def backward(g):
        if values.requires_grad:
            values._accumulate(g[rows])

    return Tensor._from_op(data, (values,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    x = _coerce(x)
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def stack_last(parts: list) -> Tensor:
    """Stack (..., n) tensors into (..., n, len(parts)) — used to interleave pairs."""
    expanded = [p.reshape(p.shape + (1,)) for p in parts]
    return concat(expanded, axis=-1)
