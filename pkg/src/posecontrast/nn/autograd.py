"""A small dense-tensor reverse-mode autodiff engine on top of numpy."""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """float64 array plus an optional gradient and the op that produced it."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'})"

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def _child(self, data, parents, op, backward) -> "Tensor":
        out = Tensor(data, any(p.requires_grad for p in parents), parents, op)
        if out.requires_grad:
            out._backward = backward
        return out

    # -- ops ---------------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return self._child(self.data + other.data, (self, other), "+", backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return self._child(self.data * other.data, (self, other), "*", backward)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, Tensor) else -np.asarray(other))

    def __matmul__(self, other):
        def backward(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return self._child(self.data @ other.data, (self, other), "@", backward)

    def tanh(self):
        y = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - y * y))

        return self._child(y, (self,), "tanh", backward)

    def sigmoid(self):
        y = 0.5 * (1.0 + np.tanh(0.5 * self.data))

        def backward(g):
            self._accumulate(g * y * (1.0 - y))

        return self._child(y, (self,), "sigmoid", backward)

    def sum(self):
        def backward(g):
            self._accumulate(np.broadcast_to(g, self.shape))

        return self._child(self.data.sum(), (self,), "sum", backward)

    def __getitem__(self, idx):
        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accumulate(full)

        return self._child(self.data[idx], (self,), "getitem", backward)

    def normalize_rows(self):
        """Row-wise L2 normalisation; zero rows pass through unchanged.

        Returns the normalised tensor and a boolean mask of zero-norm rows.
        """
        norms = np.sqrt(np.sum(self.data * self.data, axis=1, keepdims=True))
        zero = norms[:, 0] == 0.0
        safe = np.where(norms == 0.0, 1.0, norms)
        y = self.data / safe

        def backward(g):
            proj = np.sum(y * g, axis=1, keepdims=True)
            gx = (g - y * proj) / safe
            gx[zero] = g[zero]
            self._accumulate(gx)

        return self._child(y, (self,), "normalize", backward), zero

    # -- reverse pass ------------------------------------------------------

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        backward_many([self], [grad])


def _topo_order(roots) -> list[Tensor]:
    order, seen = [], set()
    stack = [(r, False) for r in roots]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward_many(outputs, grads):
    """Seed several outputs with upstream gradients and run one reverse pass.

    Gradients of every node reachable from ``outputs`` are reset first, so
    repeated passes over the same graph do not accumulate.
    """
    order = _topo_order([o for o in outputs if o.requires_grad])
    for node in order:
        node.grad = None
    for out, g in zip(outputs, grads):
        if out.requires_grad:
            out._accumulate(np.broadcast_to(np.asarray(g, dtype=np.float64), out.shape))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
