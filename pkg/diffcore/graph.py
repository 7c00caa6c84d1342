"""
Computation graph nodes. A Tensor wraps an ndarray; operations that touch a
tensor with requires_grad record their parents and a closure that pushes
the output gradient back to them. One backward pass per forward pass.
"""
import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

Number = Union[int, float]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 parents: Sequence["Tensor"] = (), backward: Optional[Callable] = None):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        # in-place add keeps the node's dtype
        self.grad += grad

    def backward(self, grad: Optional[np.ndarray] = None):
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        self.accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(_topological_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __mul__(self, factor: Number):
        return scale(self, factor)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _topological_order(root: Tensor):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward=backward)
    return Tensor(data)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data))


def stop_gradient(x: Tensor) -> Tensor:
    return Tensor(x.data.copy())


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backward(g):
        a.accumulate(_unbroadcast(g, a.data.shape))
        b.accumulate(_unbroadcast(g, b.data.shape))

    return make_result(out, (a, b), backward)


def scale(x: Tensor, factor: Number) -> Tensor:
    factor = float(factor)
    out = x.data * factor

    def backward(g):
        x.accumulate(g * factor)

    return make_result(out, (x,), backward)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)
