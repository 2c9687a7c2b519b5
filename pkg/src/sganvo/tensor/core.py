"""Tensor node and reverse-mode differentiation.

Every primitive records a backward closure that is itself written in terms of
Tensor operations, so running the reverse pass with recording switched on
yields a gradient that can be differentiated again.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_ids = itertools.count()


class _Mode(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.debug = False
        self.dtype = np.float64


_mode = _Mode()


def get_default_dtype():
    return _mode.dtype


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _mode.dtype = dtype.type


def is_grad_enabled() -> bool:
    return _mode.grad_enabled


@contextlib.contextmanager
def grad_mode(enabled: bool):
    prev = _mode.grad_enabled
    _mode.grad_enabled = enabled
    try:
        yield
    finally:
        _mode.grad_enabled = prev


def no_grad():
    return grad_mode(False)


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Check every primitive's inputs for NaN/inf while active."""
    prev = _mode.debug
    _mode.debug = enabled
    try:
        yield
    finally:
        _mode.debug = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "node_id", "op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else _mode.dtype
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.node_id = next(_ids)
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    # -- basic properties -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar (implemented in ops) -------------------------------
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __pow__(self, p):
        return _ops().power(self, p)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __getitem__(self, key):
        return _ops().getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops().transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops().mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        leaves = [n for n in toposort(self) if n.is_leaf and n.requires_grad]
        for leaf, g in zip(leaves, grad(self, leaves)):
            leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data


def _ops():
    from . import ops

    return ops


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, np.ndarray) and x.dtype.kind == "f":
        dtype = x.dtype
    return Tensor(x, dtype=dtype)


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap a forward value; record it on the graph if any parent needs a gradient.

    ``backward(g, needs)`` receives the output cotangent as a Tensor and a tuple
    of flags (one per parent) and returns one Tensor or None per parent.
    """
    out = Tensor(data, dtype=data.dtype if data.dtype.kind == "f" else None)
    out.op = op
    if _mode.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def check_finite(op: str, *arrays: np.ndarray) -> None:
    if not _mode.debug:
        return
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"{op}: non-finite input detected")


def toposort(output: Tensor) -> list:
    """Nodes reachable from ``output`` that require grad, parents before children."""
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen or not node.requires_grad:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p.node_id not in seen:
                stack.append((p, False))
    return order


def reachable(output: Tensor, target: Tensor) -> bool:
    """True if ``target`` lies on a differentiable path into ``output``."""
    return any(n.node_id == target.node_id for n in toposort(output))


def grad(
    output: Tensor,
    wrt: Iterable[Tensor],
    grad_output: Optional[Tensor] = None,
    create_graph: bool = False,
) -> list:
    """Return d(output)/d(w) for each w in ``wrt``.

    Tensors in ``wrt`` that ``output`` does not depend on get a zero gradient.
    With ``create_graph`` the returned Tensors are recorded on the graph and may
    be differentiated again.
    """
    wrt = list(wrt)
    for w in wrt:
        if not w.requires_grad:
            raise ValueError(f"grad: tensor {w.name or w.shape} does not require grad")
    if grad_output is None:
        if output.size != 1:
            raise ValueError(f"grad: output must be a scalar, got shape {output.shape}")
        grad_output = Tensor(np.ones_like(output.data))
    wanted = {w.node_id for w in wrt}
    found: dict = {}
    grads = {output.node_id: as_tensor(grad_output)}
    with grad_mode(create_graph):
        for node in reversed(toposort(output)):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node.node_id in wanted:
                found[node.node_id] = g
            if node._backward is None:
                continue
            needs = tuple(p.requires_grad for p in node._parents)
            parent_grads = node._backward(g, needs)
            for p, pg, need in zip(node._parents, parent_grads, needs):
                if pg is None or not need:
                    continue
                prev = grads.get(p.node_id)
                grads[p.node_id] = pg if prev is None else prev + pg
    out = []
    for w in wrt:
        g = found.get(w.node_id)
        if g is None:
            g = Tensor(np.zeros_like(w.data))
        elif not create_graph:
            g = g.detach()
        out.append(g)
    return out
