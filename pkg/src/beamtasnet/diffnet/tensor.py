"""Tensor, operation tape and reverse-mode gradient propagation."""
from __future__ import annotations

import threading
import weakref
from collections import OrderedDict
from contextlib import contextmanager
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "Graph",
    "ParamSet",
    "no_grad",
    "is_grad_enabled",
    "backward",
    "as_tensor",
    "NonFiniteError",
]

_state = threading.local()


class NonFiniteError(FloatingPointError):
    pass


def _graph_stack() -> list:
    if not hasattr(_state, "graphs"):
        _state.graphs = []
        _state.grad_enabled = True
    return _state.graphs


def is_grad_enabled() -> bool:
    _graph_stack()
    return _state.grad_enabled


@contextmanager
def no_grad():
    """Run ops without recording; outputs never require grad."""
    _graph_stack()
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    """One recorded operation: its inputs, kind and backward closure."""

    __slots__ = ("op", "inputs", "backward_fn", "saved_elements", "output")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable, saved_elements: int):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.saved_elements = saved_elements
        self.output = None


class Graph:
    """Tape of operations recorded while the graph is active.

    Nodes are appended in creation order, which is a valid topological order,
    so backward is a single reversed sweep.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, *exc):
        _graph_stack().remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    @property
    def retained_elements(self) -> int:
        """Number of array elements held alive for the backward pass."""
        return sum(n.saved_elements for n in self.nodes)

    def backward(self, loss: "Tensor", params: "ParamSet | None" = None):
        return backward(loss, graph=self, params=params)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "node", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self):
        return self.value.size

    def numpy(self) -> np.ndarray:
        return self.value

    def detach(self) -> "Tensor":
        return Tensor(self.value, requires_grad=False)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; implementations live in functional
    def __add__(self, other):
        from . import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F
        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F
        return F.mul(self, -1.0)

    def __getitem__(self, idx):
        from . import functional as F
        return F.getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


CHECK_FINITE = True


def all_finite(a) -> bool:
    # NaN/inf propagate into the sum; only an overflowing sum needs the full scan
    total = np.sum(a)
    return bool(np.isfinite(total)) or bool(np.all(np.isfinite(a)))


def make_result(op: str, value: np.ndarray, inputs: tuple, backward_fn: Callable,
                saved: Iterable = ()) -> Tensor:
    """Wrap an op output, recording a node when any input needs a gradient."""
    if CHECK_FINITE and not all_finite(value):
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor(value)
    if is_grad_enabled() and any(isinstance(t, Tensor) and t.requires_grad for t in inputs):
        saved_elements = sum(np.size(a) for a in saved if a is not None)
        node = Node(op, inputs, backward_fn, saved_elements)
        # weak link: a strong one would form a Tensor<->Node cycle that keeps
        # large activations alive until the cyclic collector happens to run
        node.output = weakref.ref(out)
        out.node = node
        out.requires_grad = True
        for g in _graph_stack():
            g.nodes.append(node)
    return out


def _topo_order(loss: Tensor) -> list[Node]:
    order, seen = [], set()
    stack = [(loss.node, False)] if loss.node is not None else []
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for t in node.inputs:
            if isinstance(t, Tensor) and t.node is not None and id(t.node) not in seen:
                stack.append((t.node, False))
    return order


def backward(loss: Tensor, graph: Graph | None = None, params: "ParamSet | None" = None):
    """Propagate d(loss)/d(.) to every tensor that requires grad.

    Leaf tensors accumulate into ``.grad``. Returns ``{name: gradient}`` for
    ``params`` (zeros for parameters the loss does not depend on), or an empty
    dict when no parameter set is given.
    """
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    nodes = graph.nodes if graph is not None else _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(nodes):
        out = node.output()
        g = grads.pop(id(out), None) if out is not None else None
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            if not all_finite(gi):
                raise NonFiniteError(f"non-finite gradient in {node.op}")
            if t.node is None:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            elif id(t) in grads:
                grads[id(t)] = grads[id(t)] + gi
            else:
                grads[id(t)] = gi
    if params is None:
        return {}
    return {name: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for name, p in params.items()}


class ParamSet(OrderedDict):
    """Named trainable tensors. Insertion order fixes checkpoint order."""

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value), requires_grad=True, name=name)
        self[name] = t
        return t

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: p.grad for n, p in self.items() if p.grad is not None}

    def astype(self, dtype) -> "ParamSet":
        out = ParamSet()
        for n, p in self.items():
            out.add(n, p.value.astype(dtype))
        return out

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for n, p in self.items():
            out.add(n, p.value.copy())
        return out

    def num_elements(self) -> int:
        return sum(p.size for p in self.values())
