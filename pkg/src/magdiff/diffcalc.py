"""Small reverse-mode autodiff over dense float64 numpy arrays.

A :class:`Graph` records every operation applied to tensors that live on it.
Tensors are immutable (their buffers are read-only). Operations on tensors
that do not belong to any graph produce plain constants and record nothing.

Example::

    g = Graph()
    w = g.param("w", np.ones((3, 2)))
    y = matmul(constant(np.eye(3)), w)
    grads = backward(g, sum_all(square(y)))
    grads["w"]  # 2 * w
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class ShapeError(ValueError):
    pass


class MaskError(ValueError):
    """A softmax row had no allowed entry."""


class Tensor:
    __slots__ = ("data", "graph", "node", "name")

    def __init__(self, data, graph: "Graph | None" = None, node: int | None = None, name: str | None = None,
                 _owned: bool = False):
        # results of recorded ops are fresh arrays and need no defensive copy
        arr = data if _owned else np.array(data, dtype=np.float64, copy=True)
        arr.flags.writeable = False
        self.data = arr
        self.graph = graph
        self.node = node
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, on_graph={self.graph is not None})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    parents: tuple[Tensor, ...]
    # maps upstream gradient -> one gradient per parent (None where not needed)
    rule: Callable[[np.ndarray], tuple[np.ndarray | None, ...]] | None


@dataclass
class Graph:
    """Tape of recorded operations, in topological (execution) order."""

    nodes: list[_Node] = field(default_factory=list)
    params: dict[str, Tensor] = field(default_factory=dict)

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, self, len(self.nodes), name)
        self.nodes.append(_Node((), None))
        self.params[name] = t
        return t

    def _record(self, out: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
        t = Tensor(out, self, len(self.nodes), _owned=True)
        self.nodes.append(_Node(parents, rule))
        return t


def constant(value) -> Tensor:
    return Tensor(value)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _graph_of(*ts: Tensor) -> Graph | None:
    g = None
    for t in ts:
        if t.graph is not None:
            if g is not None and t.graph is not g:
                raise ValueError("tensors belong to different graphs")
            g = t.graph
    return g


def _apply(out: np.ndarray, parents: tuple[Tensor, ...], rule) -> Tensor:
    g = _graph_of(*parents)
    out = np.asarray(out, dtype=np.float64)
    if not out.flags.owndata or not out.flags.writeable:
        out = out.copy()
    if g is None:
        return Tensor(out, _owned=True)
    return g._record(out, parents, rule)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- operations

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return _apply(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _apply(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _apply(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _apply(ad * bd, (a, b),
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _apply(a.data * c, (a,), lambda g: (g * c,))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _apply(a.data.T, (a,), lambda g: (g.T,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _apply(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    ad = a.data
    sig = 0.5 * (1.0 + np.tanh(0.5 * ad))  # overflow-free logistic
    return _apply(ad * sig, (a,), lambda g: (g * (sig + ad * sig * (1.0 - sig)),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _apply(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    return _apply(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def gather_rows(a: Tensor, index) -> Tensor:
    """``a[index]`` along the first axis; repeated indices accumulate gradient."""
    idx = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def rule(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _apply(a.data[idx], (a,), rule)


def softmax_masked(scores: Tensor, mask) -> Tensor:
    """Row softmax restricted to entries where ``mask`` is true.

    Excluded entries get exactly zero weight; the row maximum used for
    stabilisation is taken over allowed entries only.
    """
    scores = _as_tensor(scores)
    allow = np.asarray(getattr(mask, "allow", mask), dtype=bool)
    if allow.shape != scores.shape:
        raise ShapeError(f"mask shape {allow.shape} does not match scores {scores.shape}")
    if scores.data.ndim != 2:
        raise ShapeError("softmax_masked expects a matrix")
    empty = ~allow.any(axis=1)
    if empty.any():
        raise MaskError(f"row {int(np.argmax(empty))} has no allowed entry")
    s = np.where(allow, scores.data, -np.inf)
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)  # exp(-inf) == 0 exactly
    p = e / e.sum(axis=1, keepdims=True)

    def rule(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _apply(p, (scores,), rule)


# ---------------------------------------------------------------- backward

def backward(graph: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradient of the scalar ``loss`` with respect to every parameter of ``graph``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.graph is not graph:
        raise ValueError("loss was not recorded on this graph")
    grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for i in range(loss.node, -1, -1):
        g = grads.pop(i, None) if graph.nodes[i].rule is not None else grads.get(i)
        node = graph.nodes[i]
        if g is None or node.rule is None:
            continue
        for parent, pg in zip(node.parents, node.rule(g)):
            if parent.graph is None or pg is None:
                continue
            if parent.node in grads:
                grads[parent.node] = grads[parent.node] + pg
            else:
                grads[parent.node] = pg
    out = {}
    for name, t in graph.params.items():
        g = grads.get(t.node)
        out[name] = np.zeros(t.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
    return out


# ---------------------------------------------------------------- optimizer

@dataclass(frozen=True)
class AdamState:
    step: int
    m: Mapping[str, np.ndarray]
    v: Mapping[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``; inputs are not modified."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if set(params) != set(grads) or set(params) != set(state.m):
        raise KeyError("params, grads and optimizer state must share the same keys")
    step = state.step + 1
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeError(f"shape mismatch for {k!r}: param {p.shape}, grad {g.shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(step, new_m, new_v)
