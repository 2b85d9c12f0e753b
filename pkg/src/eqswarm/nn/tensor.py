"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps an ndarray plus an optional gradient buffer and a
vector-Jacobian-product closure linking it to its parents.  Calling
``backward()`` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients on every reachable leaf.

Graph recording can be suspended with ``no_grad()`` (rollout collection runs
that way); the forward numerics are identical either way.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import ContractError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _result(data, parents, vjp) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._vjp = vjp
        return out

    def _accum(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.data.shape)
        # First write keeps the (possibly shared) array; later writes allocate,
        # so upstream buffers are never mutated in place.
        self.grad = g if self.grad is None else self.grad + g

    # -- basic properties ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        o = as_tensor(other)
        def vjp(g):
            if self.requires_grad:
                self._accum(g)
            if o.requires_grad:
                o._accum(g)
        return Tensor._result(self.data + o.data, (self, o), vjp)

    __radd__ = __add__

    def __neg__(self):
        def vjp(g):
            self._accum(-g)
        return Tensor._result(-self.data, (self,), vjp)

    def __sub__(self, other):
        o = as_tensor(other)
        def vjp(g):
            if self.requires_grad:
                self._accum(g)
            if o.requires_grad:
                o._accum(-g)
        return Tensor._result(self.data - o.data, (self, o), vjp)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        o = as_tensor(other)
        def vjp(g):
            if self.requires_grad:
                self._accum(g * o.data)
            if o.requires_grad:
                o._accum(g * self.data)
        return Tensor._result(self.data * o.data, (self, o), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = as_tensor(other)
        out_data = self.data / o.data
        def vjp(g):
            if self.requires_grad:
                self._accum(g / o.data)
            if o.requires_grad:
                o._accum(-g * out_data / o.data)
        return Tensor._result(out_data, (self, o), vjp)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        def vjp(g):
            self._accum(g * exponent * self.data ** (exponent - 1.0))
        return Tensor._result(self.data ** exponent, (self,), vjp)

    def __matmul__(self, other):
        o = as_tensor(other)
        a, b = self.data, o.data
        if a.ndim < 2 or b.ndim < 2:
            raise ContractError("matmul operands must have >= 2 dims")
        def vjp(g):
            if self.requires_grad:
                self._accum(g @ b.swapaxes(-1, -2))
            if o.requires_grad:
                o._accum(a.swapaxes(-1, -2) @ g)
        return Tensor._result(a @ b, (self, o), vjp)

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.data.shape
        def vjp(g):
            self._accum(g.reshape(src))
        return Tensor._result(self.data.reshape(shape), (self,), vjp)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        def vjp(g):
            self._accum(g.transpose(inv))
        return Tensor._result(self.data.transpose(axes), (self,), vjp)

    def swapaxes(self, i: int, j: int):
        def vjp(g):
            self._accum(g.swapaxes(i, j))
        return Tensor._result(self.data.swapaxes(i, j), (self,), vjp)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        src = self.data.shape
        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, src))
        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False):
        src = self.data.shape
        count = self.data.size if axis is None else src[axis]
        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g / count, src))
        return Tensor._result(
            self.data.mean(axis=axis, keepdims=keepdims), (self,), vjp
        )

    # -- elementwise nonlinearities -----------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        def vjp(g):
            self._accum(g * out_data)
        return Tensor._result(out_data, (self,), vjp)

    def log(self):
        def vjp(g):
            self._accum(g / self.data)
        return Tensor._result(np.log(self.data), (self,), vjp)

    def sqrt(self):
        out_data = np.sqrt(self.data)
        def vjp(g):
            self._accum(g * (0.5 / out_data))
        return Tensor._result(out_data, (self,), vjp)

    def relu(self):
        keep = self.data > 0
        def vjp(g):
            self._accum(g * keep)
        return Tensor._result(np.where(keep, self.data, 0.0), (self,), vjp)

    def softmax(self, axis: int = -1):
        """Max-shifted, numerically stable row softmax."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)
        def vjp(g):
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            self._accum(out_data * (g - inner))
        return Tensor._result(out_data, (self,), vjp)

    def minimum(self, other):
        o = as_tensor(other)
        take_self = self.data <= o.data
        def vjp(g):
            if self.requires_grad:
                self._accum(g * take_self)
            if o.requires_grad:
                o._accum(g * ~take_self)
        return Tensor._result(np.where(take_self, self.data, o.data), (self, o), vjp)

    def maximum(self, other):
        o = as_tensor(other)
        take_self = self.data >= o.data
        def vjp(g):
            if self.requires_grad:
                self._accum(g * take_self)
            if o.requires_grad:
                o._accum(g * ~take_self)
        return Tensor._result(np.where(take_self, self.data, o.data), (self, o), vjp)

    def clip(self, lo: float, hi: float):
        inside = (self.data >= lo) & (self.data <= hi)
        def vjp(g):
            self._accum(g * inside)
        return Tensor._result(np.clip(self.data, lo, hi), (self,), vjp)

    # -- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode accumulation seeded at this scalar."""
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar tensor")
        if not self.requires_grad:
            return
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)
                node.grad = None  # free intermediates; leaves keep theirs


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def parameter(data) -> Tensor:
    """A leaf tensor that accumulates gradients."""
    return Tensor(np.array(data), requires_grad=True)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)
    def vjp(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])
    return Tensor._result(np.concatenate(datas, axis=axis), tuple(tensors), vjp)
