"""Reverse-mode automatic differentiation over numpy arrays.

A small tape-based engine: each operation returns a new :class:`Tensor`
holding the result plus a closure that routes the output gradient back to
its parents.  ``Tensor.backward()`` walks the graph in reverse topological
order and accumulates gradients into ``.grad``.

Everything is float64.  Scalars and plain ndarrays passed to an operation
are treated as constants (no graph node, no gradient).
"""

from __future__ import annotations

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcast when producing it."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    # -- graph bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every reachable node's ``.grad``."""
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
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data + other.data, (self, other))

            def backward(g, a=self, b=other):
                a._accumulate(_unbroadcast(g, a.shape))
                b._accumulate(_unbroadcast(g, b.shape))

        else:
            out = Tensor(self.data + other, (self,))

            def backward(g, a=self):
                a._accumulate(_unbroadcast(g, a.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, (self,))

        def backward(g, a=self):
            a._accumulate(-g)

        out._backward = backward
        return out

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data * other.data, (self, other))

            def backward(g, a=self, b=other):
                a._accumulate(_unbroadcast(g * b.data, a.shape))
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        else:
            const = np.asarray(other, dtype=np.float64)
            out = Tensor(self.data * const, (self,))

            def backward(g, a=self, c=const):
                a._accumulate(_unbroadcast(g * c, a.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return self ** -1.0 * other

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, (self,))

        def backward(g, a=self, p=exponent):
            a._accumulate(g * p * a.data ** (p - 1.0))

        out._backward = backward
        return out

    def __matmul__(self, other: "Tensor"):
        a, b = self.data, other.data
        out = Tensor(a @ b, (self, other))

        def backward(g, ta=self, tb=other, a=a, b=b):
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            ta._accumulate(_unbroadcast(ga, a.shape))
            tb._accumulate(_unbroadcast(gb, b.shape))

        out._backward = backward
        return out

    # -- elementwise functions ------------------------------------------------

    def exp(self):
        value = np.exp(self.data)
        out = Tensor(value, (self,))

        def backward(g, a=self, v=value):
            a._accumulate(g * v)

        out._backward = backward
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))

        def backward(g, a=self):
            a._accumulate(g / a.data)

        out._backward = backward
        return out

    def tanh(self):
        value = np.tanh(self.data)
        out = Tensor(value, (self,))

        def backward(g, a=self, v=value):
            a._accumulate(g * (1.0 - v * v))

        out._backward = backward
        return out

    def gelu(self):
        """tanh-approximation GELU; smooth, so finite differences stay honest."""
        x = self.data
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        value = 0.5 * x * (1.0 + t)
        out = Tensor(value, (self,))

        def backward(g, a=self, x=x, t=t):
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            a._accumulate(g * local)

        out._backward = backward
        return out

    # -- reductions & shape -----------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def backward(g, a=self, axis=axis, keepdims=keepdims):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), (self,))

        def backward(g, a=self):
            a._accumulate(g.reshape(a.shape))

        out._backward = backward
        return out

    def transpose(self, axes):
        out = Tensor(self.data.transpose(axes), (self,))
        inverse = np.argsort(axes)

        def backward(g, a=self, inv=tuple(inverse)):
            a._accumulate(g.transpose(inv))

        out._backward = backward
        return out

    def __getitem__(self, index):
        """Slicing and integer-array indexing; gradients scatter-add back."""
        out = Tensor(self.data[index], (self,))

        def backward(g, a=self, index=index):
            scattered = np.zeros_like(a.data)
            np.add.at(scattered, index, g)
            a._accumulate(scattered)

        out._backward = backward
        return out

    # -- softmax family ------------------------------------------------------

    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        value = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(value, (self,))

        def backward(g, a=self, s=value, axis=axis):
            dot = (g * s).sum(axis=axis, keepdims=True)
            a._accumulate(s * (g - dot))

        out._backward = backward
        return out

    def log_softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        value = shifted - lse
        out = Tensor(value, (self,))

        def backward(g, a=self, v=value, axis=axis):
            a._accumulate(g - np.exp(v) * g.sum(axis=axis, keepdims=True))

        out._backward = backward
        return out


def concatenate(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, tensors=tensors, offsets=offsets, axis=axis):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            t._accumulate(g[tuple(index)])

    out._backward = backward
    return out
