"""
Strata-NeRF - Reverse-Mode Automatic Differentiation
====================================================

A define-by-run tape over dense float64 numpy arrays.

A ``Graph`` is an append-only list of nodes. Leaves are created with
``Graph.leaf``; every op whose inputs touch a graph is recorded on it, so the
node list is always in topological order. Tensors without a node are
constants: an op whose inputs are all constants is evaluated eagerly and
records nothing, which is how inference runs.

Broadcasting rules per op-kind:

- add, subtract, multiply, divide, maximum: numpy broadcasting.
- matmul: ``a[..., k] @ b[k, n]`` or ``a[..., k] @ b[k]``.
- sum, mean: reduce over ``axis`` (all axes when ``None``).
- concat: equal shapes except along ``axis``.
- gather_rows: ``table[N, D]`` indexed by an integer array.
- take: integer-array index along ``axis``.
- broadcast: numpy ``broadcast_to`` rules.

The graph is rebuilt every training step; nothing is reused across steps.
"""

from __future__ import annotations

import builtins
from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import (
    NonFiniteError,
    NonScalarRootError,
    ShapeError,
    StrataError,
    UnknownOpError,
)

Array = np.ndarray


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    input_values: tuple[Array, ...]
    value: Array
    attrs: dict[str, Any] = field(default_factory=dict)
    name: str | None = None


class Graph:
    """Append-only computation tape."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value: Any, name: str | None = None) -> "Tensor":
        data = np.array(value, dtype=np.float64)
        self.nodes.append(Node("leaf", (), (), data, name=name))
        return Tensor(data, len(self.nodes) - 1, self)

    def leaves(self, arrays: Mapping[str, Array]) -> dict[str, "Tensor"]:
        return {name: self.leaf(value, name=name) for name, value in arrays.items()}

    def _record(self, kind: str, inputs: Sequence["Tensor"], value: Array,
                attrs: dict[str, Any]) -> "Tensor":
        ids = tuple(t.node if t.graph is self else -1 for t in inputs)
        self.nodes.append(Node(kind, ids, tuple(t.data for t in inputs), value, attrs))
        return Tensor(value, len(self.nodes) - 1, self)


class Tensor:
    """Dense float64 array, optionally bound to a node of a ``Graph``."""

    __slots__ = ("data", "node", "graph")
    __array_ufunc__ = None

    def __init__(self, data: Any, node: int | None = None, graph: Graph | None = None) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.node = node
        self.graph = graph

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        where = "const" if self.node is None else f"node={self.node}"
        return f"Tensor(shape={list(self.shape)}, {where})"

    def __add__(self, other: Any) -> "Tensor":
        return forward_op("add", self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return forward_op("add", other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return forward_op("subtract", self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return forward_op("subtract", other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return forward_op("multiply", self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return forward_op("multiply", other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return forward_op("divide", self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return forward_op("divide", other, self)

    def __neg__(self) -> "Tensor":
        return forward_op("negate", self)

    def __matmul__(self, other: Any) -> "Tensor":
        return forward_op("matmul", self, other)


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ------------------------------------------------------------
# Op registry
# ------------------------------------------------------------

ForwardFn = Callable[[tuple[Array, ...], dict[str, Any]], Array]
BackwardFn = Callable[[Array, tuple[Array, ...], Array, dict[str, Any]], list[Array | None]]


@dataclass(frozen=True)
class OpDef:
    forward: ForwardFn
    backward: BackwardFn
    arity: int | None  # None means variadic


_OPS: dict[str, OpDef] = {}


def register_op(kind: str, forward: ForwardFn, backward: BackwardFn, arity: int | None) -> None:
    _OPS[kind] = OpDef(forward, backward, arity)


def op_kinds() -> list[str]:
    return sorted(_OPS)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary(kind: str, fn: Callable[[Array, Array], Array],
            grads: Callable[[Array, Array, Array, Array], tuple[Array, Array]]) -> None:
    def forward(values, attrs):
        a, b = values
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError:
            raise ShapeError(
                f"{kind}: cannot broadcast shapes {list(a.shape)} and {list(b.shape)}"
            ) from None
        return fn(a, b)

    def backward(g, values, out, attrs):
        a, b = values
        ga, gb = grads(g, a, b, out)
        return [_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)]

    register_op(kind, forward, backward, 2)


def _unary(kind: str, fn: Callable[[Array], Array],
           grad: Callable[[Array, Array, Array], Array]) -> None:
    register_op(
        kind,
        lambda values, attrs: fn(values[0]),
        lambda g, values, out, attrs: [grad(g, values[0], out)],
        1,
    )


def _sigmoid(x: Array) -> Array:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _maximum_mask(a: Array, b: Array) -> Array:
    return (a >= b).astype(np.float64)


_binary("add", np.add, lambda g, a, b, out: (g, g))
_binary("subtract", np.subtract, lambda g, a, b, out: (g, -g))
_binary("multiply", np.multiply, lambda g, a, b, out: (g * b, g * a))
_binary("divide", np.divide, lambda g, a, b, out: (g / b, -g * a / (b * b)))
_binary(
    "maximum",
    np.maximum,
    lambda g, a, b, out: (g * _maximum_mask(a, b), g * (1.0 - _maximum_mask(a, b))),
)

_unary("negate", np.negative, lambda g, x, out: -g)
_unary("relu", lambda x: np.maximum(x, 0.0), lambda g, x, out: g * (x > 0.0))
_unary("softplus", lambda x: np.logaddexp(0.0, x), lambda g, x, out: g * _sigmoid(x))
_unary("sigmoid", _sigmoid, lambda g, x, out: g * out * (1.0 - out))
_unary("exp", np.exp, lambda g, x, out: g * out)
_unary("log", np.log, lambda g, x, out: g / x)
_unary("sin", np.sin, lambda g, x, out: g * np.cos(x))
_unary("cos", np.cos, lambda g, x, out: -g * np.sin(x))
_unary("square", np.square, lambda g, x, out: 2.0 * x * g)
_unary("sqrt", np.sqrt, lambda g, x, out: g / (2.0 * out))
_unary("abs", np.abs, lambda g, x, out: g * np.sign(x))
_unary("stop_gradient", np.copy, lambda g, x, out: None)


def _matmul_forward(values, attrs):
    a, b = values
    if a.ndim < 1 or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(
            f"matmul: cannot contract shapes {list(a.shape)} and {list(b.shape)}"
        )
    return a @ b


def _matmul_backward(g, values, out, attrs):
    a, b = values
    k = a.shape[-1]
    if b.ndim == 1:
        ga = g[..., None] * b
        gb = a.reshape(-1, k).T @ g.reshape(-1)
    else:
        ga = g @ b.T
        gb = a.reshape(-1, k).T @ g.reshape(-1, b.shape[1])
    return [ga, gb]


register_op("matmul", _matmul_forward, _matmul_backward, 2)


def _expand_reduced(g: Array, shape: tuple[int, ...], axis: Any, keepdims: bool) -> Array:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(sorted(ax % len(shape) for ax in axes))
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def _reduced_count(shape: tuple[int, ...], axis: Any) -> int:
    if axis is None:
        return int(np.prod(shape, dtype=np.int64))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return int(np.prod([shape[ax] for ax in axes], dtype=np.int64))


register_op(
    "sum",
    lambda values, attrs: np.sum(values[0], axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)),
    lambda g, values, out, attrs: [
        _expand_reduced(g, values[0].shape, attrs.get("axis"), attrs.get("keepdims", False))
    ],
    1,
)

register_op(
    "mean",
    lambda values, attrs: np.mean(values[0], axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)),
    lambda g, values, out, attrs: [
        _expand_reduced(g, values[0].shape, attrs.get("axis"), attrs.get("keepdims", False))
        / _reduced_count(values[0].shape, attrs.get("axis"))
    ],
    1,
)


def _broadcast_forward(values, attrs):
    x = values[0]
    shape = tuple(attrs["shape"])
    try:
        return np.broadcast_to(x, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast shape {list(x.shape)} to {list(shape)}") from None


register_op(
    "broadcast",
    _broadcast_forward,
    lambda g, values, out, attrs: [_unbroadcast(g, values[0].shape)],
    1,
)


def _reshape_forward(values, attrs):
    x = values[0]
    try:
        return x.reshape(attrs["shape"])
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {list(x.shape)} to {list(attrs['shape'])}") from None


register_op(
    "reshape",
    _reshape_forward,
    lambda g, values, out, attrs: [g.reshape(values[0].shape)],
    1,
)


def _concat_forward(values, attrs):
    axis = attrs.get("axis", -1)
    try:
        return np.concatenate(values, axis=axis)
    except ValueError:
        shapes = [list(v.shape) for v in values]
        raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}") from None


def _concat_backward(g, values, out, attrs):
    axis = attrs.get("axis", -1)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]
    return list(np.split(g, bounds, axis=axis))


register_op("concat", _concat_forward, _concat_backward, None)


def _gather_forward(values, attrs):
    table = values[0]
    index = attrs["index"]
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got shape {list(table.shape)}")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for table of shape {list(table.shape)}")
    return table[index]


def _gather_backward(g, values, out, attrs):
    grad = np.zeros_like(values[0])
    np.add.at(grad, attrs["index"], g)
    return [grad]


register_op("gather_rows", _gather_forward, _gather_backward, 1)


def _take_forward(values, attrs):
    x = values[0]
    axis = attrs.get("axis", 0)
    index = attrs["index"]
    if index.size and (index.min() < -x.shape[axis] or index.max() >= x.shape[axis]):
        raise ShapeError(f"take: index out of range for axis {axis} of shape {list(x.shape)}")
    return np.take(x, index, axis=axis)


def _take_backward(g, values, out, attrs):
    grad = np.zeros_like(values[0])
    axis = attrs.get("axis", 0)
    np.add.at(np.moveaxis(grad, axis, 0), attrs["index"], np.moveaxis(g, axis, 0))
    return [grad]


register_op("take", _take_forward, _take_backward, 1)


def _shift(x: Array, axis: int, forward: bool) -> Array:
    zeros = np.zeros_like(np.take(x, [0], axis=axis))
    n = x.shape[axis]
    if forward:
        return np.concatenate([zeros, np.take(x, np.arange(n - 1), axis=axis)], axis=axis)
    return np.concatenate([np.take(x, np.arange(1, n), axis=axis), zeros], axis=axis)


def _cumsum_forward(values, attrs):
    axis = attrs.get("axis", -1)
    out = np.cumsum(values[0], axis=axis)
    return _shift(out, axis, forward=True) if attrs.get("exclusive", False) else out


def _cumsum_backward(g, values, out, attrs):
    axis = attrs.get("axis", -1)
    rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
    return [_shift(rev, axis, forward=False) if attrs.get("exclusive", False) else rev]


register_op("cumsum", _cumsum_forward, _cumsum_backward, 1)


# ------------------------------------------------------------
# Forward / backward
# ------------------------------------------------------------

def forward_op(kind: str, *inputs: Any, **attrs: Any) -> Tensor:
    """Evaluate ``kind`` on ``inputs`` and record it on their graph."""
    op = _OPS.get(kind)
    if op is None:
        raise UnknownOpError(f"unknown op-kind '{kind}'")
    if op.arity is not None and len(inputs) != op.arity:
        raise ShapeError(f"{kind}: expected {op.arity} inputs, got {len(inputs)}")
    tensors = [as_tensor(x) for x in inputs]
    graphs = {id(t.graph): t.graph for t in tensors if t.graph is not None}
    if len(graphs) > 1:
        raise StrataError(f"{kind}: inputs belong to different graphs")
    value = op.forward(tuple(t.data for t in tensors), attrs)
    value = np.asarray(value, dtype=np.float64)
    if not graphs:
        return Tensor(value)
    graph = next(iter(graphs.values()))
    return graph._record(kind, tensors, value, attrs)


class Gradients(Mapping):
    """Gradient map keyed by node id (or tensor); unreachable nodes read as zero."""

    def __init__(self, graph: Graph, grads: list[Array | None]) -> None:
        self._graph = graph
        self._grads = grads

    def __getitem__(self, key: int | Tensor) -> Array:
        node = key.node if isinstance(key, Tensor) else key
        if node is None:
            raise KeyError("constant tensors have no gradient entry")
        grad = self._grads[node]
        if grad is None:
            return np.zeros_like(self._graph.nodes[node].value)
        return grad

    def __iter__(self) -> Iterator[int]:
        return iter(range(len(self._grads)))

    def __len__(self) -> int:
        return len(self._grads)


def backward(graph: Graph, root: Tensor) -> Gradients:
    """Reverse sweep from a scalar ``root``."""
    if root.shape != ():
        raise NonScalarRootError(f"backward: root must be scalar, got shape {list(root.shape)}")
    if root.graph is not graph or root.node is None:
        raise StrataError("backward: root is not recorded on this graph")
    grads: list[Array | None] = [None] * len(graph.nodes)
    grads[root.node] = np.ones_like(root.data)
    for index in range(root.node, -1, -1):
        g = grads[index]
        node = graph.nodes[index]
        if g is None or node.kind == "leaf":
            continue
        upstream = _OPS[node.kind].backward(g, node.input_values, node.value, node.attrs)
        for source, contribution in zip(node.inputs, upstream):
            if source < 0 or contribution is None:
                continue
            contribution = np.asarray(contribution, dtype=np.float64)
            grads[source] = contribution if grads[source] is None else grads[source] + contribution
    return Gradients(graph, grads)


def gradient_check(f: Callable[[Tensor], Tensor], point: Any, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients of ``f``."""
    point = np.array(point, dtype=np.float64)
    graph = Graph()
    x = graph.leaf(point)
    out = f(x)
    analytic = backward(graph, out)[x]

    def evaluate(values: Array) -> float:
        value = as_tensor(f(Tensor(values))).data
        if not np.all(np.isfinite(value)):
            raise NonFiniteError("gradient_check: f is not finite at a perturbed point")
        return float(value)

    flat = point.ravel()
    worst = 0.0
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        numeric = (evaluate(plus.reshape(point.shape)) - evaluate(minus.reshape(point.shape))) / (2.0 * h)
        a = analytic.ravel()[i]
        worst = builtins.max(worst, builtins.abs(a - numeric) / builtins.max(1.0, builtins.abs(a)))
    return worst


# ------------------------------------------------------------
# Functional API
# ------------------------------------------------------------

def matmul(a: Any, b: Any) -> Tensor:
    return forward_op("matmul", a, b)


def add(a: Any, b: Any) -> Tensor:
    return forward_op("add", a, b)


def subtract(a: Any, b: Any) -> Tensor:
    return forward_op("subtract", a, b)


def multiply(a: Any, b: Any) -> Tensor:
    return forward_op("multiply", a, b)


def divide(a: Any, b: Any) -> Tensor:
    return forward_op("divide", a, b)


def maximum(a: Any, b: Any) -> Tensor:
    return forward_op("maximum", a, b)


def relu(x: Any) -> Tensor:
    return forward_op("relu", x)


def softplus(x: Any) -> Tensor:
    return forward_op("softplus", x)


def sigmoid(x: Any) -> Tensor:
    return forward_op("sigmoid", x)


def exp(x: Any) -> Tensor:
    return forward_op("exp", x)


def log(x: Any) -> Tensor:
    return forward_op("log", x)


def sin(x: Any) -> Tensor:
    return forward_op("sin", x)


def cos(x: Any) -> Tensor:
    return forward_op("cos", x)


def square(x: Any) -> Tensor:
    return forward_op("square", x)


def sqrt(x: Any) -> Tensor:
    return forward_op("sqrt", x)


def abs(x: Any) -> Tensor:  # noqa: A001
    return forward_op("abs", x)


def sum(x: Any, axis: Any = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return forward_op("sum", x, axis=axis, keepdims=keepdims)


def mean(x: Any, axis: Any = None, keepdims: bool = False) -> Tensor:
    return forward_op("mean", x, axis=axis, keepdims=keepdims)


def broadcast_to(x: Any, shape: Sequence[int]) -> Tensor:
    return forward_op("broadcast", x, shape=tuple(shape))


def reshape(x: Any, shape: Sequence[int]) -> Tensor:
    return forward_op("reshape", x, shape=tuple(shape))


def concat(tensors: Sequence[Any], axis: int = -1) -> Tensor:
    return forward_op("concat", *tensors, axis=axis)


def gather_rows(table: Any, index: Any) -> Tensor:
    return forward_op("gather_rows", table, index=np.asarray(index, dtype=np.int64))


def take(x: Any, index: Any, axis: int = 0) -> Tensor:
    return forward_op("take", x, index=np.asarray(index, dtype=np.int64), axis=axis)


def cumsum(x: Any, axis: int = -1, exclusive: bool = False) -> Tensor:
    return forward_op("cumsum", x, axis=axis, exclusive=exclusive)


def stop_gradient(x: Any) -> Tensor:
    return forward_op("stop_gradient", x)


def mse(prediction: Any, target: Any) -> Tensor:
    return mean(square(subtract(prediction, target)))
