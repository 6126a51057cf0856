"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D array. Scalars are 1x1. Operations record their parents
and a closure that pushes the output gradient back into them; ``backward``
walks the graph once in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DegenerateInputError, LabelError, ShapeError

DTYPE = np.float64


def _as_matrix(values) -> np.ndarray:
    arr = np.array(values, dtype=DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False, *, _parents=(), _op: str = "leaf"):
        self.values = _as_matrix(values)
        self.grad = np.zeros_like(self.values)
        self.requires_grad = requires_grad
        self.op = _op
        self._parents = tuple(_parents)
        self._backward = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self):
        backward(self)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __neg__ = lambda self: mul(self, -1.0)
    __matmul__ = lambda self, other: matmul(self, other)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values, parents, op, backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward_fn
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
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


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into every reachable leaf that requires grad.

    Intermediate gradients are recomputed from scratch on each call; leaf
    gradients accumulate until zeroed.
    """
    if root.shape != (1, 1):
        raise ContractError(f"backward() needs a scalar (1x1) root, got shape {root.shape}")
    order = _topological_order(root)
    for node in order:
        if not node.is_leaf:
            node.grad = np.zeros_like(node.values)
    root.grad = root.grad + 1.0 if root.is_leaf else np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad += g


# ---------------------------------------------------------------- elementwise


def _broadcast_pair(a: Tensor, b: Tensor, opname: str):
    if a.shape == b.shape:
        return
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return
    if b.shape == (1, 1):
        return
    raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return g.sum(keepdims=True).reshape(1, 1)
    return g.sum(axis=0, keepdims=True)


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector (bias) or a 1x1 scalar."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape and a.values.size < b.values.size:
        a, b = b, a
    _broadcast_pair(a, b, "add")

    def _bw(g):
        _accumulate(a, g)
        _accumulate(b, _reduce_to(g, b.shape))

    return _result(a.values + b.values, (a, b), "add", _bw)


def sub(a, b) -> Tensor:
    return add(a, mul(_lift(b), -1.0))


def mul(a, b) -> Tensor:
    """Elementwise product; a python scalar, row vector or 1x1 broadcasts."""
    a = _lift(a)
    if not isinstance(b, Tensor):
        c = float(b)

        def _bw_scalar(g):
            _accumulate(a, g * c)

        return _result(a.values * c, (a,), "scale", _bw_scalar)
    if a.shape != b.shape and a.values.size < b.values.size:
        a, b = b, a
    _broadcast_pair(a, b, "mul")

    def _bw(g):
        _accumulate(a, g * b.values)
        _accumulate(b, _reduce_to(g * a.values, b.shape))

    return _result(a.values * b.values, (a, b), "mul", _bw)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0

    def _bw(g):
        _accumulate(x, g * mask)

    return _result(np.where(mask, x.values, 0.0), (x,), "relu", _bw)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.values > 0
    scale = np.where(mask, 1.0, slope)

    def _bw(g):
        _accumulate(x, g * scale)

    return _result(x.values * scale, (x,), "leaky_relu", _bw)


def elu(x: Tensor) -> Tensor:
    mask = x.values > 0
    expm = np.exp(np.minimum(x.values, 0.0))
    out = np.where(mask, x.values, expm - 1.0)

    def _bw(g):
        _accumulate(x, g * np.where(mask, 1.0, expm))

    return _result(out, (x,), "elu", _bw)


def sigmoid(x: Tensor) -> Tensor:
    v = x.values
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def _bw(g):
        _accumulate(x, g * out * (1.0 - out))

    return _result(out, (x,), "sigmoid", _bw)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)

    def _bw(g):
        _accumulate(x, g * (1.0 - out * out))

    return _result(out, (x,), "tanh", _bw)


_ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "elu": elu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def ewise(kind: str, x: Tensor, slope: float = 0.2) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def _bw(g):
        if a.requires_grad:
            a.grad += g @ b.values.T
        if b.requires_grad:
            b.grad += a.values.T @ g

    return _result(a.values @ b.values, (a, b), "matmul", _bw)


def spmm(s, d: Tensor) -> Tensor:
    """Sparse (constant) times dense. ``s`` is a scipy sparse matrix or anything
    exposing ``as_operator()``."""
    if hasattr(s, "as_operator"):
        s = s.as_operator()
    if not sp.issparse(s):
        raise ContractError("spmm expects a sparse operator")
    if s.shape[1] != d.shape[0]:
        raise ShapeError(f"spmm: operator {s.shape} incompatible with dense {d.shape}")

    def _bw(g):
        if d.requires_grad:
            d.grad += np.asarray(s.T @ g)

    return _result(np.asarray(s @ d.values), (d,), "spmm", _bw)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    k = a.shape[1]

    def _bw(g):
        _accumulate(a, g[:, :k])
        _accumulate(b, g[:, k:])

    return _result(np.hstack([a.values, b.values]), (a, b), "concat_cols", _bw)


def gather_rows(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def _bw(g):
        if x.requires_grad:
            np.add.at(x.grad, index, g)

    return _result(x.values[index], (x,), "gather_rows", _bw)


def gather_cols(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)

    def _bw(g):
        if x.requires_grad:
            np.add.at(x.grad.T, index, g.T)

    return _result(x.values[:, index], (x,), "gather_cols", _bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:

    def _bw(g):
        if x.requires_grad:
            x.grad[:, start:stop] += g

    return _result(x.values[:, start:stop], (x,), "slice_cols", _bw)


def take_per_row(x: Tensor, index) -> Tensor:
    """Column ``index[r]`` from each row r, as an (n x 1) tensor."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    if index.shape != (x.shape[0],):
        raise ShapeError(f"take_per_row: need {x.shape[0]} indices, got {index.shape}")

    def _bw(g):
        if x.requires_grad:
            x.grad[rows, index] += g[:, 0]

    return _result(x.values[rows, index][:, None], (x,), "take_per_row", _bw)


def sum_all(x: Tensor) -> Tensor:
    def _bw(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(x.values.sum().reshape(1, 1), (x,), "sum", _bw)


def mean_all(x: Tensor) -> Tensor:
    return mul(sum_all(x), 1.0 / x.values.size)


# ---------------------------------------------------------------- softmax family


def softmax_rows(x: Tensor) -> Tensor:
    z = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def _bw(g):
        _accumulate(x, p * (g - (g * p).sum(axis=1, keepdims=True)))

    return _result(p, (x,), "softmax_rows", _bw)


def log_softmax_rows(x: Tensor) -> Tensor:
    z = x.values - x.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def _bw(g):
        _accumulate(x, g - p * g.sum(axis=1, keepdims=True))

    return _result(out, (x,), "log_softmax_rows", _bw)


def segment_softmax(scores, segments, num_segments: int | None = None) -> Tensor:
    """Softmax of an (E x 1) score column within groups sharing a segment id."""
    scores = _lift(scores)
    if scores.values.size == 0:
        return Tensor(np.zeros((0, 1)))
    if scores.shape[0] == 1 and scores.shape[1] > 1:
        raise ShapeError("segment_softmax expects an (E x 1) column")
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape[0] != scores.shape[0]:
        raise ShapeError(f"segment_softmax: {scores.shape[0]} scores but {seg.shape[0]} segment ids")
    if num_segments is None:
        num_segments = int(seg.max()) + 1
    s = scores.values[:, 0]
    seg_max = np.full(num_segments, -np.inf)
    np.maximum.at(seg_max, seg, s)
    e = np.exp(s - seg_max[seg])
    denom = np.bincount(seg, weights=e, minlength=num_segments)
    p = e / denom[seg]

    def _bw(g):
        if scores.requires_grad:
            gp = g[:, 0] * p
            seg_dot = np.bincount(seg, weights=gp, minlength=num_segments)
            scores.grad[:, 0] += gp - p * seg_dot[seg]

    return _result(p[:, None], (scores,), "segment_softmax", _bw)


def edge_aggregate(weights: Tensor, h: Tensor, src, dst, num_nodes: int) -> Tensor:
    """out[v] = sum over edges e with dst[e] == v of weights[e] * h[src[e]]."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    w = weights.values[:, 0]
    op = sp.csr_matrix((w, (dst, src)), shape=(num_nodes, h.shape[0]))

    def _bw(g):
        if h.requires_grad:
            h.grad += np.asarray(op.T @ g)
        if weights.requires_grad:
            weights.grad[:, 0] += np.einsum("ij,ij->i", g[dst], h.values[src])

    return _result(np.asarray(op @ h.values), (weights, h), "edge_aggregate", _bw)


# ---------------------------------------------------------------- losses


def masked_cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-likelihood over the masked rows.

    ``labels`` holds a column index per row of ``logits``; only masked rows
    are read. ``mask`` is a boolean vector or an index array.
    """
    labels = np.asarray(labels)
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if rows.size == 0:
        raise DegenerateInputError("masked_cross_entropy: empty mask")
    target = labels[rows].astype(np.int64)
    n_cls = logits.shape[1]
    if target.min() < 0 or target.max() >= n_cls:
        raise LabelError(f"masked_cross_entropy: labels must lie in [0, {n_cls})")
    logp = log_softmax_rows(gather_rows(logits, rows))
    picked = take_per_row(logp, target)
    return mul(sum_all(picked), -1.0 / rows.size)


def mse(a: Tensor, b) -> Tensor:
    b = np.asarray(b, dtype=DTYPE)
    if b.shape != a.shape:
        raise ShapeError(f"mse: shapes differ, {a.shape} vs {b.shape}")
    diff = a.values - b
    n = diff.size

    def _bw(g):
        _accumulate(a, g * (2.0 / n) * diff)

    return _result(np.array([[np.mean(diff * diff)]]), (a,), "mse", _bw)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, p: Tensor) -> "AdamState":
        return cls(np.zeros_like(p.values), np.zeros_like(p.values))


def adam_step(params, states, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of ``params`` in place, then zero their gradients."""
    for p, s in zip(params, states):
        g = p.grad
        s.t += 1
        s.m = beta1 * s.m + (1.0 - beta1) * g
        s.v = beta2 * s.v + (1.0 - beta2) * g * g
        m_hat = s.m / (1.0 - beta1 ** s.t)
        v_hat = s.v / (1.0 - beta2 ** s.t)
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.states = [AdamState.like(p) for p in self.params]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self):
        adam_step(self.params, self.states, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# ---------------------------------------------------------------- gradient checking


def numerical_gradient(fn, x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``x.values``."""
    grad = np.zeros_like(x.values)
    it = np.nditer(x.values, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x.values[idx]
        x.values[idx] = orig + h
        fp = fn().item()
        x.values[idx] = orig - h
        fm = fn().item()
        x.values[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, inputs, h: float = 1e-5) -> float:
    """Max relative error between analytic and numerical gradients over ``inputs``."""
    for x in inputs:
        x.zero_grad()
    backward(fn())
    worst = 0.0
    for x in inputs:
        analytic = x.grad.copy()
        numeric = numerical_gradient(fn, x, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
