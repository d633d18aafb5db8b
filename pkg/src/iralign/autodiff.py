"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: every op builds a `Tensor` node remembering its parents and a
closure that routes the output gradient back to them.  `Tensor.backward()`
walks the graph in reverse topological order.  The engine is dtype-agnostic;
whatever dtype the leaf arrays carry (float32 for training, float64 for
gradient checks) flows through unchanged.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Array node on the autodiff tape."""

    __slots__ = ("data", "grad", "_parents", "_grad_fn")

    def __init__(
        self,
        data,
        _parents: tuple["Tensor", ...] = (),
        _grad_fn: Callable[[Array], None] | None = None,
    ):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: Array | None = None
        self._parents = _parents
        self._grad_fn = _grad_fn

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, grad: Array) -> None:
        if self.grad is None:
            self.grad = grad.copy() if grad.base is not None else grad
        else:
            self.grad = self.grad + grad

    def backward(self, seed: Array | None = None) -> None:
        """Backpropagate from this node; seeds with ones when omitted."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = (
            np.ones_like(self.data) if seed is None else np.asarray(seed, dtype=self.dtype)
        )
        for node in reversed(order):
            if node._grad_fn is not None and node.grad is not None:
                node._grad_fn(node.grad)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other, self.data)
        out = Tensor(self.data + other.data, (self, other))

        def grad_fn(g: Array) -> None:
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        out._grad_fn = grad_fn
        return out

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other, self.data)
        out = Tensor(self.data - other.data, (self, other))

        def grad_fn(g: Array) -> None:
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(-g, other.shape))

        out._grad_fn = grad_fn
        return out

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other, self.data) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other, self.data)
        out = Tensor(self.data * other.data, (self, other))

        def grad_fn(g: Array) -> None:
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        out._grad_fn = grad_fn
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other, self.data)
        out = Tensor(self.data / other.data, (self, other))

        def grad_fn(g: Array) -> None:
            self._accumulate(_unbroadcast(g / other.data, self.shape))
            other._accumulate(
                _unbroadcast(-g * self.data / (other.data * other.data), other.shape)
            )

        out._grad_fn = grad_fn
        return out

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other, self.data) / self

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, (self,))
        out._grad_fn = lambda g: self._accumulate(-g)
        return out

    def __pow__(self, exponent: float) -> "Tensor":
        out = Tensor(self.data**exponent, (self,))

        def grad_fn(g: Array) -> None:
            self._accumulate(g * exponent * self.data ** (exponent - 1))

        out._grad_fn = grad_fn
        return out

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other, self.data)
        a, b = self.data, other.data
        if a.ndim != b.ndim:
            raise ValueError(
                f"matmul requires equal ranks (got {a.ndim} and {b.ndim}); reshape first"
            )
        out = Tensor(a @ b, (self, other))

        def grad_fn(g: Array) -> None:
            self._accumulate(g @ b.swapaxes(-1, -2))
            other._accumulate(a.swapaxes(-1, -2) @ g)

        out._grad_fn = grad_fn
        return out

    # -- elementwise functions -----------------------------------------

    def exp(self) -> "Tensor":
        value = np.exp(self.data)
        out = Tensor(value, (self,))
        out._grad_fn = lambda g: self._accumulate(g * value)
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), (self,))
        out._grad_fn = lambda g: self._accumulate(g / self.data)
        return out

    def sqrt(self) -> "Tensor":
        value = np.sqrt(self.data)
        out = Tensor(value, (self,))
        out._grad_fn = lambda g: self._accumulate(g / (2.0 * value))
        return out

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0), (self,))
        out._grad_fn = lambda g: self._accumulate(g * mask)
        return out

    def leaky_relu(self, negative_slope: float = 0.2) -> "Tensor":
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, negative_slope * self.data), (self,))
        out._grad_fn = lambda g: self._accumulate(g * np.where(mask, 1.0, negative_slope))
        return out

    def elu(self, alpha: float = 1.0) -> "Tensor":
        mask = self.data > 0
        expm1 = np.expm1(self.data)
        out = Tensor(np.where(mask, self.data, alpha * expm1), (self,))

        def grad_fn(g: Array) -> None:
            self._accumulate(g * np.where(mask, 1.0, alpha * (expm1 + 1.0)))

        out._grad_fn = grad_fn
        return out

    def sigmoid(self) -> "Tensor":
        value = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(value, (self,))
        out._grad_fn = lambda g: self._accumulate(g * value * (1.0 - value))
        return out

    def tanh(self) -> "Tensor":
        value = np.tanh(self.data)
        out = Tensor(value, (self,))
        out._grad_fn = lambda g: self._accumulate(g * (1.0 - value * value))
        return out

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def grad_fn(g: Array) -> None:
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).astype(self.dtype, copy=False))
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).astype(self.dtype, copy=False))

        out._grad_fn = grad_fn
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        elif isinstance(axis, tuple):
            count = int(np.prod([self.data.shape[a] for a in axis]))
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    # -- shaping -------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), (self,))
        out._grad_fn = lambda g: self._accumulate(g.reshape(self.shape))
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(range(self.ndim - 1, -1, -1))
        out = Tensor(self.data.transpose(axes), (self,))
        inverse = np.argsort(axes)
        out._grad_fn = lambda g: self._accumulate(g.transpose(tuple(inverse)))
        return out

    def __getitem__(self, key) -> "Tensor":
        out = Tensor(self.data[key], (self,))

        def grad_fn(g: Array) -> None:
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self._accumulate(full)

        out._grad_fn = grad_fn
        return out


def as_tensor(value, like: Array | None = None) -> Tensor:
    """Wrap `value`; python scalars adopt the dtype of `like` when given."""
    if isinstance(value, Tensor):
        return value
    if like is not None and isinstance(value, (int, float)):
        return Tensor(np.asarray(value, dtype=like.dtype))
    return Tensor(value)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g: Array) -> None:
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index: list = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            t._accumulate(g[tuple(index)])

    out._grad_fn = grad_fn
    return out


def take(table: Tensor, indices: Array) -> Tensor:
    """Row gather along axis 0 (embedding lookup); scatter-add on backward."""
    table = as_tensor(table)
    indices = np.asarray(indices)
    out = Tensor(table.data[indices], (table,))

    def grad_fn(g: Array) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        table._accumulate(full)

    out._grad_fn = grad_fn
    return out


def segment_sum(values: Tensor, segment_ids: Array, num_segments: int) -> Tensor:
    """Sum rows of `values` into `num_segments` buckets given by `segment_ids`."""
    values = as_tensor(values)
    segment_ids = np.asarray(segment_ids)
    shape = (num_segments,) + values.shape[1:]
    acc = np.zeros(shape, dtype=values.dtype)
    np.add.at(acc, segment_ids, values.data)
    out = Tensor(acc, (values,))
    out._grad_fn = lambda g: values._accumulate(g[segment_ids])
    return out


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`; the shift by the (detached) max is exact."""
    shifted = logits - logits.data.max(axis=axis, keepdims=True)
    exp = shifted.exp()
    return exp / exp.sum(axis=axis, keepdims=True)


def segment_softmax(logits: Tensor, segment_ids: Array, num_segments: int) -> Tensor:
    """Softmax of 1-D `logits` within each segment (per-node neighborhoods)."""
    logits = as_tensor(logits)
    seg_max = np.full(num_segments, -np.inf, dtype=logits.dtype)
    np.maximum.at(seg_max, segment_ids, logits.data)
    shifted = logits - seg_max[segment_ids]
    exp = shifted.exp()
    denom = segment_sum(exp, segment_ids, num_segments)
    return exp / denom[segment_ids]


def sigmoid_cross_entropy(logits: Tensor, targets: Array) -> Tensor:
    """Numerically stable elementwise BCE between logits and 0/1 targets."""
    logits = as_tensor(logits)
    x = logits.data
    t = np.asarray(targets, dtype=x.dtype)
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = Tensor(loss, (logits,))

    def grad_fn(g: Array) -> None:
        sig = 1.0 / (1.0 + np.exp(-x))
        logits._accumulate(g * (sig - t))

    out._grad_fn = grad_fn
    return out
