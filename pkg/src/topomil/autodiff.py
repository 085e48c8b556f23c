"""Small reverse-mode differentiation engine on float64 numpy arrays.

A :class:`Node` records the operation that produced it.  Calling
:meth:`Node.backward` on a scalar walks the recorded graph in reverse
topological order, accumulates gradients into every node that requires them
and then drops the graph so that intermediates can be garbage collected.

Broadcasting is deliberately limited to scalar-with-array.  Anything else
needs an explicit :func:`reshape` or :func:`broadcast_rows`.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "DomainError",
    "Node",
    "Parameter",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "relu",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "square",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "pairwise_sq_dist",
    "gather_entries",
    "reshape",
    "transpose",
    "broadcast_rows",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Input lies outside the domain of an operation."""


class Node:
    """A float64 array that takes part in a recorded computation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data)
        self._parents: tuple[Node, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op!r}" if self.op else ""
        return f"Node(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Node":
        return Node(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.requires_grad:
            self.grad += g

    def backward(self) -> None:
        """Backpropagate from this scalar node, then release the graph."""
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar root, got shape {self.shape}")
        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.requires_grad:
                node._backward(node.grad)
        for node in order:
            node._parents = ()
            node._backward = None

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


class Parameter(Node):
    """A named trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def constant(data) -> Node:
    return data if isinstance(data, Node) else Node(data)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Node], backward, op: str) -> Node:
    requires = any(p.requires_grad for p in parents)
    return Node(data, requires, _parents=parents if requires else (), _backward=backward if requires else None, op=op)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Node, b: Node) -> Node:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def reshape(a: Node, shape: Sequence[int]) -> Node:
    old = a.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return _make(a.data.reshape(tuple(shape)), (a,), backward, "reshape")


def transpose(a: Node) -> Node:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")

    def backward(g):
        a._accumulate(g.T)

    return _make(a.data.T.copy(), (a,), backward, "transpose")


def broadcast_rows(v: Node, n: int) -> Node:
    """Stack ``n`` copies of vector ``v`` into an ``n x len(v)`` matrix."""
    if v.ndim != 1:
        raise DimensionError(f"broadcast_rows needs a vector, got shape {v.shape}")

    def backward(g):
        v._accumulate(g.sum(axis=0))

    return _make(np.tile(v.data, (n, 1)), (v,), backward, "broadcast_rows")


# ---------------------------------------------------------------------------
# elementwise


def _check_binary(a: Node, b: Node, name: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ and neither is a scalar")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # undo scalar broadcast
    if shape == g.shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a: Node, b: Node) -> Node:
    _check_binary(a, b, "add")

    def backward(g):
        a._accumulate(_reduce_to(g, a.shape))
        b._accumulate(_reduce_to(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a: Node, b: Node) -> Node:
    _check_binary(a, b, "sub")

    def backward(g):
        a._accumulate(_reduce_to(g, a.shape))
        b._accumulate(_reduce_to(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a: Node, b: Node) -> Node:
    _check_binary(a, b, "mul")

    def backward(g):
        a._accumulate(_reduce_to(g * b.data, a.shape))
        b._accumulate(_reduce_to(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a: Node, b: Node) -> Node:
    _check_binary(a, b, "div")
    out = a.data / b.data

    def backward(g):
        a._accumulate(_reduce_to(g / b.data, a.shape))
        b._accumulate(_reduce_to(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward, "div")


def neg(a: Node) -> Node:
    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward, "neg")


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def backward(g):
        a._accumulate(c * g)

    return _make(c * a.data, (a,), backward, "scale")


def relu(a: Node) -> Node:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward, "relu")


def tanh(a: Node) -> Node:
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return _make(out, (a,), backward, "tanh")


def exp(a: Node) -> Node:
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out)

    return _make(out, (a,), backward, "exp")


def log(a: Node) -> Node:
    if np.any(a.data < 0):
        raise DomainError("log of a negative value")

    def backward(g):
        a._accumulate(g / a.data)

    with np.errstate(divide="ignore"):
        return _make(np.log(a.data), (a,), backward, "log")


def sqrt(a: Node, grad_eps: float = 0.0) -> Node:
    """Square root.  ``grad_eps`` is added under the root in the derivative only,
    which keeps the gradient finite at zero without perturbing the value."""
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(a.data)

    def backward(g):
        with np.errstate(divide="ignore"):
            a._accumulate(g * 0.5 / np.sqrt(a.data + grad_eps))

    return _make(out, (a,), backward, "sqrt")


def square(a: Node) -> Node:
    def backward(g):
        a._accumulate(2.0 * a.data * g)

    return _make(a.data * a.data, (a,), backward, "square")


# ---------------------------------------------------------------------------
# reductions


def _check_axis(a: Node, axis: int | None) -> None:
    if axis is None:
        if a.data.size == 0:
            raise ValueError("reduction over an empty array")
        return
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    if a.shape[axis] == 0:
        raise ValueError(f"reduction over empty axis {axis}")


def reduce_sum(a: Node, axis: int | None = None) -> Node:
    if axis is not None:
        _check_axis(a, axis)
    shape = a.shape

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, shape).copy())
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), shape).copy())

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), backward, "sum")


def reduce_mean(a: Node, axis: int | None = None) -> Node:
    _check_axis(a, axis)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / count)


def reduce_max(a: Node, axis: int | None = None) -> tuple[Node, np.ndarray]:
    """Maximum and its index.  Ties resolve to the lowest index and the
    gradient goes to that single element."""
    _check_axis(a, axis)
    if axis is None:
        flat = int(np.argmax(a.data))
        out = np.asarray(a.data.reshape(-1)[flat])

        def backward(g):
            full = np.zeros(a.data.size)
            full[flat] = g
            a._accumulate(full.reshape(a.shape))

        return _make(out, (a,), backward, "max"), np.asarray(flat)

    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        a._accumulate(full)

    return _make(out, (a,), backward, "max"), idx


# ---------------------------------------------------------------------------
# softmax family


def softmax(a: Node) -> Node:
    if a.ndim != 1:
        raise DimensionError(f"softmax expects a vector, got shape {a.shape}")
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def backward(g):
        a._accumulate(out * (g - np.dot(g, out)))

    return _make(out, (a,), backward, "softmax")


def log_softmax(a: Node) -> Node:
    """Row-wise log-softmax of a vector or of each row of a matrix."""
    m = a.data.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(a.data - m).sum(axis=-1, keepdims=True))
    out = a.data - lse
    probs = np.exp(out)

    def backward(g):
        a._accumulate(g - probs * g.sum(axis=-1, keepdims=True))

    return _make(out, (a,), backward, "log_softmax")


def cross_entropy(logits: Node, target) -> Node:
    """Negative log-likelihood of ``target`` under softmax(logits).

    ``logits`` may be a single ``[c]`` vector with an integer target or an
    ``[n, c]`` matrix with ``n`` targets, in which case the mean is returned.
    """
    if logits.ndim == 1:
        c = logits.shape[0]
        t = int(target)
        if not 0 <= t < c:
            raise IndexError(f"target class {t} out of range for {c} classes")
        m = logits.data.max()
        lse = m + np.log(np.exp(logits.data - m).sum())
        probs = np.exp(logits.data - lse)

        def backward(g):
            onehot = np.zeros(c)
            onehot[t] = 1.0
            logits._accumulate(g * (probs - onehot))

        return _make(np.asarray(lse - logits.data[t]), (logits,), backward, "cross_entropy")

    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [c] or [n, c] logits, got {logits.shape}")
    n, c = logits.shape
    t = np.broadcast_to(np.asarray(target, dtype=np.int64), (n,))
    if np.any(t < 0) or np.any(t >= c):
        raise IndexError(f"target classes out of range for {c} classes")
    m = logits.data.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits.data - m).sum(axis=1, keepdims=True)))[:, 0]
    rows = np.arange(n)
    probs = np.exp(logits.data - lse[:, None])

    def backward(g):
        d = probs.copy()
        d[rows, t] -= 1.0
        logits._accumulate(g * d / n)

    return _make(np.asarray(np.mean(lse - logits.data[rows, t])), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# distances


def squared_distances(points: np.ndarray) -> np.ndarray:
    """Plain-array pairwise squared Euclidean distances (symmetric, zero diagonal)."""
    from scipy.spatial.distance import pdist, squareform

    points = np.asarray(points, dtype=np.float64)
    if len(points) == 1:
        return np.zeros((1, 1))
    return squareform(pdist(points, "sqeuclidean"))


def pairwise_sq_dist(points: Node) -> Node:
    if points.ndim != 2 or points.shape[0] < 1:
        raise DimensionError(f"pairwise_sq_dist expects an [n, d] matrix with n >= 1, got {points.shape}")
    x = points.data

    def backward(g):
        s = g + g.T
        np.fill_diagonal(s, 0.0)
        points._accumulate(2.0 * (s.sum(axis=1)[:, None] * x - s @ x))

    return _make(squared_distances(x), (points,), backward, "pairwise_sq_dist")


def gather_entries(matrix: Node, pairs: Iterable[tuple[int, int]] | np.ndarray) -> Node:
    """Select ``matrix[i, j]`` for every ``(i, j)`` in ``pairs``."""
    idx = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n, m = matrix.shape
    if idx.size and (idx.min() < 0 or idx[:, 0].max() >= n or idx[:, 1].max() >= m):
        raise IndexError(f"pair index out of range for matrix of shape {matrix.shape}")
    rows, cols = idx[:, 0], idx[:, 1]

    def backward(g):
        full = np.zeros_like(matrix.data)
        np.add.at(full, (rows, cols), g)
        matrix._accumulate(full)

    return _make(matrix.data[rows, cols], (matrix,), backward, "gather")
