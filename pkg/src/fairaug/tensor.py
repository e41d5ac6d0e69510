"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable quantity is a :class:`Node` holding an eagerly computed
value plus references to its parents and the local vector-Jacobian rules
recorded at construction time. Calling :func:`backward` on a scalar node
walks the tape in reverse topological order and accumulates gradients onto
every ancestor.

The op set is deliberately small: dense elementwise arithmetic, matrix
products, reductions, row selection/scatter, and one sparse kernel
(:func:`spmm_sym`) that multiplies a symmetric edge-list operator with a
dense matrix. No general broadcasting: binary ops accept equal shapes or a
scalar (shape ``()``) on either side.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Node",
    "ShapeError",
    "add",
    "subtract",
    "multiply",
    "divide",
    "scale",
    "matmul",
    "transpose",
    "sigmoid",
    "logsigmoid",
    "square",
    "rsqrt",
    "log1p",
    "flatten",
    "sum_",
    "mean",
    "select_rows",
    "index_sum",
    "concat",
    "vstack",
    "cross_differences",
    "spmm_sym",
    "backward",
    "finite_difference_check",
    "Adam",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class Node:
    """One entry of the computation tape.

    ``value`` is a float64 ndarray, ``grad`` stays ``None`` until a
    :func:`backward` pass touches this node, ``parents`` and ``vjps`` hold
    the recorded local backward rules. Nodes built directly (no parents)
    are leaves; optimizers update ``value`` in place between tape builds.
    """

    __slots__ = ("value", "grad", "parents", "vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, leaf={not self.parents})"

    # Small arithmetic sugar; the module-level functions are the real API.
    def __add__(self, other):
        return add(self, as_node(other))

    def __sub__(self, other):
        return subtract(self, as_node(other))

    def __mul__(self, other):
        return multiply(self, as_node(other))

    def __truediv__(self, other):
        return divide(self, as_node(other))


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _check_binary_shapes(op: str, a: Node, b: Node):
    if a.value.shape != b.value.shape and a.value.shape != () and b.value.shape != ():
        raise ShapeError(f"{op}: incompatible shapes {a.value.shape} and {b.value.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # Undo the scalar-() broadcast of a binary op.
    if shape == () and grad.shape != ():
        return np.asarray(grad.sum())
    return grad


def add(a: Node, b: Node) -> Node:
    _check_binary_shapes("add", a, b)
    return Node(a.value + b.value, (a, b),
                (lambda g: _reduce_to(g, a.value.shape),
                 lambda g: _reduce_to(g, b.value.shape)))


def subtract(a: Node, b: Node) -> Node:
    _check_binary_shapes("subtract", a, b)
    return Node(a.value - b.value, (a, b),
                (lambda g: _reduce_to(g, a.value.shape),
                 lambda g: _reduce_to(-g, b.value.shape)))


def multiply(a: Node, b: Node) -> Node:
    _check_binary_shapes("multiply", a, b)
    av, bv = a.value, b.value
    return Node(av * bv, (a, b),
                (lambda g: _reduce_to(g * bv, av.shape),
                 lambda g: _reduce_to(g * av, bv.shape)))


def divide(a: Node, b: Node) -> Node:
    _check_binary_shapes("divide", a, b)
    av, bv = a.value, b.value
    return Node(av / bv, (a, b),
                (lambda g: _reduce_to(g / bv, av.shape),
                 lambda g: _reduce_to(-g * av / (bv * bv), bv.shape)))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return Node(a.value * c, (a,), (lambda g: g * c,))


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.value.shape} and {b.value.shape}")
    av, bv = a.value, b.value
    return Node(av @ bv, (a, b),
                (lambda g: g @ bv.T,
                 lambda g: av.T @ g))


def transpose(a: Node) -> Node:
    return Node(np.ascontiguousarray(a.value.T), (a,), (lambda g: g.T,))


def sigmoid(a: Node) -> Node:
    v = a.value
    out = np.empty_like(v, dtype=np.float64)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return Node(out, (a,), (lambda g: g * out * (1.0 - out),))


def logsigmoid(a: Node) -> Node:
    # log(sigmoid(x)) = -softplus(-x), computed without overflow
    v = a.value
    out = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    sig = 1.0 / (1.0 + np.exp(-np.clip(v, -500, 500)))
    return Node(out, (a,), (lambda g: g * (1.0 - sig),))


def square(a: Node) -> Node:
    av = a.value
    return Node(av * av, (a,), (lambda g: g * 2.0 * av,))


def rsqrt(a: Node) -> Node:
    """Elementwise 1/sqrt with zero (not inf) at non-positive entries.

    Zero-degree rows of a normalized operator must come out all-zero, so
    the value and the gradient are both clamped to 0 there.
    """
    v = a.value
    positive = v > 0
    out = np.where(positive, np.power(v, -0.5, where=positive, out=np.ones_like(v)), 0.0)
    dv = np.where(positive, np.power(v, -1.5, where=positive, out=np.ones_like(v)), 0.0)
    return Node(out, (a,), (lambda g: g * (-0.5) * dv,))


def log1p(a: Node) -> Node:
    v = a.value
    return Node(np.log1p(v), (a,), (lambda g: g / (1.0 + v),))


def flatten(a: Node) -> Node:
    shape = a.value.shape
    return Node(a.value.reshape(-1), (a,), (lambda g: g.reshape(shape),))


def sum_(a: Node, axis: int | None = None) -> Node:
    v = a.value
    if axis is None:
        return Node(v.sum(), (a,), (lambda g: np.full(v.shape, float(g)),))
    if axis == 0:
        return Node(v.sum(axis=0), (a,), (lambda g: np.tile(g, (v.shape[0], 1)),))
    if axis == 1:
        return Node(v.sum(axis=1), (a,), (lambda g: np.repeat(g[:, None], v.shape[1], axis=1),))
    raise ValueError(f"sum_: unsupported axis {axis}")


def mean(a: Node, axis: int | None = None) -> Node:
    n = a.value.size if axis is None else a.value.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


def select_rows(a: Node, indices) -> Node:
    """Gather rows (2D input) or elements (1D input); scatter-adds on backward."""
    idx = np.asarray(indices, dtype=np.intp)
    av = a.value

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return Node(av[idx], (a,), (vjp,))


def index_sum(a: Node, indices, size: int) -> Node:
    """Segment-sum a 1D vector into ``size`` bins given per-entry bin indices."""
    if a.value.ndim != 1:
        raise ShapeError(f"index_sum: expected 1D input, got shape {a.value.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    out = np.bincount(idx, weights=a.value, minlength=size)
    return Node(out, (a,), (lambda g: g[idx],))


def concat(a: Node, b: Node) -> Node:
    if a.value.ndim != 1 or b.value.ndim != 1:
        raise ShapeError(f"concat: expected 1D inputs, got {a.value.shape} and {b.value.shape}")
    na = a.value.shape[0]
    return Node(np.concatenate([a.value, b.value]), (a, b),
                (lambda g: g[:na], lambda g: g[na:]))


def vstack(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[1]:
        raise ShapeError(f"vstack: expected 2D inputs with equal width, got {a.value.shape} and {b.value.shape}")
    na = a.value.shape[0]
    return Node(np.vstack([a.value, b.value]), (a, b),
                (lambda g: g[:na], lambda g: g[na:]))


def cross_differences(a: Node, b: Node) -> Node:
    """Matrix D with D[r, j] = b[j] - a[r] for 1D inputs a, b."""
    if a.value.ndim != 1 or b.value.ndim != 1:
        raise ShapeError(f"cross_differences: expected 1D inputs, got {a.value.shape} and {b.value.shape}")
    return Node(b.value[None, :] - a.value[:, None], (a, b),
                (lambda g: -g.sum(axis=1), lambda g: g.sum(axis=0)))


def _scatter_rows(idx: np.ndarray, contrib: np.ndarray, n: int) -> np.ndarray:
    # Deterministic segment sum: one bincount per output column.
    out = np.empty((n, contrib.shape[1]))
    for j in range(contrib.shape[1]):
        out[:, j] = np.bincount(idx, weights=contrib[:, j], minlength=n)
    return out


def spmm_sym(rows, cols, vals: Node, dense: Node, n: int) -> Node:
    """Symmetric sparse operator times dense matrix.

    The operator is given as an undirected edge list: entry ``vals[e]`` sits
    at both ``(rows[e], cols[e])`` and ``(cols[e], rows[e])`` of an ``n x n``
    matrix. Gradients flow to both the edge values and the dense operand.
    """
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if dense.value.ndim != 2 or dense.value.shape[0] != n:
        raise ShapeError(f"spmm_sym: dense operand shape {dense.value.shape} does not match n={n}")
    if vals.value.shape != rows.shape:
        raise ShapeError(f"spmm_sym: {vals.value.shape[0] if vals.value.ndim else 0} values for {rows.shape[0]} edges")
    vv, dv = vals.value, dense.value
    idx2 = np.concatenate([rows, cols])
    src2 = np.concatenate([cols, rows])

    def apply_sym(x):
        if rows.size == 0:
            return np.zeros((n, x.shape[1]))
        contrib = np.concatenate([vv, vv])[:, None] * x[src2]
        return _scatter_rows(idx2, contrib, n)

    def vjp_vals(g):
        if rows.size == 0:
            return np.zeros_like(vv)
        return (np.einsum("ed,ed->e", g[rows], dv[cols])
                + np.einsum("ed,ed->e", g[cols], dv[rows]))

    return Node(apply_sym(dv), (vals, dense), (vjp_vals, apply_sym))


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) onto ``grad`` of every ancestor of ``loss``.

    ``loss`` must be scalar. Repeated calls keep adding into ``grad``;
    set ``grad = None`` (or use :meth:`Adam.zero_grad`) to reset leaves.
    """
    if loss.value.shape != () and loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))

    adjoint = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = adjoint.get(id(node))
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            prev = adjoint.get(id(parent))
            adjoint[id(parent)] = contrib if prev is None else prev + contrib


def finite_difference_check(f, x, eps: float, coords=None) -> float:
    """Max relative error between the tape gradient of ``f`` and central differences.

    ``f`` maps a 1D :class:`Node` to a scalar :class:`Node`. ``coords``
    restricts the check to the given coordinate indices (default: all).
    """
    if eps <= 0:
        raise ValueError("finite_difference_check: eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    leaf = Node(x)
    out = f(leaf)
    if out.value.size != 1:
        raise ValueError("finite_difference_check: f must return a scalar node")
    backward(out)
    analytic = np.zeros_like(x) if leaf.grad is None else leaf.grad

    if coords is None:
        coords = range(x.size)
    worst = 0.0
    for k in coords:
        step = np.zeros_like(x)
        step[k] = eps
        fp = float(f(Node(x + step)).value)
        fm = float(f(Node(x - step)).value)
        numeric = (fp - fm) / (2.0 * eps)
        err = abs(float(analytic[k]) - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst


class Adam:
    """Per-coordinate adaptive gradient descent with bias-corrected moments."""

    def __init__(self, params: list[Node], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
