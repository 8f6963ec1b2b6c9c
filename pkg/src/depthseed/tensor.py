"""Dense tensor with reverse-mode automatic differentiation.

Each :class:`Tensor` produced by an operation keeps references to its inputs
and a closure computing the vector-Jacobian product. Calling
:meth:`Tensor.backward` on a scalar walks the graph once in reverse
topological order and accumulates gradients into the ``grad`` buffer of every
leaf created with ``requires_grad=True``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import StateError

_dtype = np.dtype(np.float32)
_grad_enabled = True


def default_dtype() -> np.dtype:
    return _dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the float type new tensors are stored in.

    Only used by the gradient checker, which needs float64 to make central
    differences meaningful.
    """
    global _dtype
    previous = _dtype
    _dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _dtype = previous


@contextlib.contextmanager
def no_grad():
    """Run forward passes without recording the graph."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, _op: str = ""):
        self.data = np.asarray(data, dtype=_dtype, order="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = tuple(_parents)
        self._backward: Optional[BackwardFn] = _backward
        self._op = _op
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._op

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{op}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Backpropagate from this tensor.

        Raises StateError when no forward graph is attached (a bare leaf) or
        when the graph was already consumed by a previous call.
        """
        if self.is_leaf:
            raise StateError("backward() needs the output of a forward pass, got a leaf tensor")
        if self._consumed:
            raise StateError("graph already consumed by a previous backward(); run forward again")
        if grad is None:
            if self.data.size != 1:
                raise StateError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape)

        order = _topological_order(self)
        grads = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if node.is_leaf:
                if node.requires_grad and g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            fn = node._backward
            node._backward = None
            node._consumed = True
            if g is None or fn is None:
                continue
            for parent, pg in zip(node._parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _topological_order(root: Tensor) -> list:
    """Nodes reachable from ``root`` that need gradients, root first."""
    order, seen = [], set()
    stack = [(root, False)]
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
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Wrap an op's output, attaching the graph only when someone needs it."""
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)
