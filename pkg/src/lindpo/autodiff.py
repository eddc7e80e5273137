"""A minimal reverse-mode automatic differentiation tape over numpy arrays.

Only the operations needed by the MLP and the preference losses are provided.
Every op records its parents and a closure mapping the output cotangent to
parent cotangents; ``Tensor.backward`` walks the graph in reverse topological
order.
"""

import numpy as np

from .errors import ContractError


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    def __repr__(self):
        return f"Tensor({self.value!r}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    def detach(self):
        """Stop-gradient: same value, no path back to the tape."""
        return Tensor(self.value)

    # graph construction -------------------------------------------------

    @staticmethod
    def _make(value, parents, backward):
        parents = tuple(p for p in parents if p.requires_grad)
        if not parents:
            return Tensor(value)
        return Tensor(value, True, parents, backward)

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

        return _binary(a, b, a.value + b.value, back)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

        return _binary(a, b, a.value - b.value, back)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return self._unary(-self.value, lambda g: -g)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            return (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape))

        return _binary(a, b, a.value * b.value, back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            ga = g @ np.swapaxes(b.value, -1, -2) if b.value.ndim > 1 else np.outer(g, b.value)
            if a.value.ndim == 1:
                gb = np.outer(a.value, g)
            else:
                gb = np.swapaxes(a.value, -1, -2) @ g
            return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

        return _binary(a, b, a.value @ b.value, back)

    def _unary(self, value, local):
        def back(g):
            return (local(g),)

        return Tensor._make(value, (self,), back)

    # elementwise --------------------------------------------------------

    def reciprocal(self):
        v = 1.0 / self.value
        return self._unary(v, lambda g: -g * v * v)

    def square(self):
        x = self.value
        return self._unary(x * x, lambda g: 2.0 * x * g)

    def tanh(self):
        y = np.tanh(self.value)
        return self._unary(y, lambda g: g * (1.0 - y * y))

    def sigmoid(self):
        y = sigmoid(self.value)
        return self._unary(y, lambda g: g * y * (1.0 - y))

    def silu(self):
        x = self.value
        s = sigmoid(x)
        return self._unary(x * s, lambda g: g * (s + x * s * (1.0 - s)))

    def softplus(self):
        x = self.value
        return self._unary(softplus(x), lambda g: g * sigmoid(x))

    # reductions and views ----------------------------------------------

    def sum(self, axis=None):
        shape = self.shape

        def local(g):
            if axis is None:
                return np.broadcast_to(g, shape).copy()
            return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

        return self._unary(self.value.sum(axis=axis), local)

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis) * (1.0 / n)

    def slice_reshape(self, start, stop, shape):
        """View ``value[start:stop]`` of a flat tensor, reshaped to ``shape``."""
        size = self.value.size

        def local(g):
            out = np.zeros(size)
            out[start:stop] = g.ravel()
            return out

        return self._unary(self.value[start:stop].reshape(shape), local)

    # backward -----------------------------------------------------------

    def backward(self):
        if self.value.size != 1:
            raise ContractError(f"backward() needs a scalar output, got shape {self.shape}")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                parent.grad = g if parent.grad is None else parent.grad + g


def _binary(a, b, value, back):
    if not (a.requires_grad or b.requires_grad):
        return Tensor(value)
    if a.requires_grad and b.requires_grad:
        return Tensor(value, True, (a, b), back)
    if a.requires_grad:
        return Tensor(value, True, (a,), lambda g: back(g)[:1])
    return Tensor(value, True, (b,), lambda g: back(g)[1:])


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # branch on sign so neither exp overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
