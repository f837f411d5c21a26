"""Dense float64 tensors with reverse-mode automatic differentiation.

All math is double precision on top of numpy buffers. Each differentiable
operation appends a node to a per-thread tape (the Graph); the tape's record
order is a topological order by construction, so backward() is a single
reverse sweep that visits every contributing node exactly once. Gradients
accumulate additively into ``.grad``; callers zero them between steps.

Broadcasting is deliberately restricted: element-wise ops require equal
shapes, except ``add`` which also accepts a bias whose shape matches the
trailing axes of the other operand. Anything else raises ShapeError.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InputError, ShapeError

_ids = itertools.count()
_tls = threading.local()


class Tensor:
    """A dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse sweep from this (scalar) tensor; consumes the tape."""
        backward(self)

    def detach(self) -> "Tensor":
        """A constant view of the same buffer, cut from the graph."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Small amount of operator sugar; the functional API below is primary.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__


class _Node:
    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Graph:
    """Ordered tape of differentiable operations for one thread."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> None:
        self.nodes.append(_Node(out, parents, backward_fn))

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


def graph() -> Graph:
    g = getattr(_tls, "graph", None)
    if g is None:
        g = _tls.graph = Graph()
    return g


def grad_enabled() -> bool:
    return getattr(_tls, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable taping; ops run as plain array math."""
    prev = grad_enabled()
    _tls.grad_enabled = False
    try:
        yield
    finally:
        _tls.grad_enabled = prev


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through the current tape.

    The tape is consumed: nodes are cleared afterwards so the next forward
    pass starts a fresh graph.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    g = graph()
    loss.grad = np.ones_like(loss.data)
    for node in reversed(g.nodes):
        if node.out.grad is None:
            continue
        node.backward_fn(node.out.grad)
    g.clear()


def _accum(t: Tensor, delta: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += delta


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        graph().record(out, parents, backward_fn)
    return out


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D weights may be applied to stacked inputs; batched
    operands must have identical leading dimensions (no broadcasting)."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands: {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree: {ad.shape} x {bd.shape}")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: leading dimensions disagree: {ad.shape} x {bd.shape}")
    out = np.matmul(ad, bd)

    def back(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, np.matmul(g, bd.swapaxes(-1, -2)))
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                k, c = bd.shape
                _accum(b, ad.reshape(-1, k).T @ g.reshape(-1, c))
            else:
                _accum(b, np.matmul(ad.swapaxes(-1, -2), g))

    return _make(out, (a, b), back)


# ---------------------------------------------------------------------------
# element-wise arithmetic


def add(a: Tensor, b) -> Tensor:
    """a + b. Shapes must match, or b is a bias whose shape equals the
    trailing axes of a (broadcast over the leading batch axes)."""
    b_is_tensor = isinstance(b, Tensor)
    bd = _as_array(b)
    if bd.shape != a.shape:
        if bd.ndim >= a.ndim or a.shape[a.ndim - bd.ndim:] != bd.shape:
            raise ShapeError(f"add: shapes {a.shape} and {bd.shape} are not "
                             "equal and not a trailing-axis bias")
    out = a.data + bd
    lead = tuple(range(a.ndim - bd.ndim))

    def back(g: np.ndarray) -> None:
        _accum(a, g)
        if b_is_tensor:
            _accum(b, g.sum(axis=lead) if lead else g)

    parents = (a, b) if b_is_tensor else (a,)
    return _make(out, parents, back)


def sub(a: Tensor, b) -> Tensor:
    b_is_tensor = isinstance(b, Tensor)
    bd = _as_array(b)
    if bd.shape != a.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {bd.shape} differ")
    out = a.data - bd

    def back(g: np.ndarray) -> None:
        _accum(a, g)
        if b_is_tensor:
            _accum(b, -g)

    parents = (a, b) if b_is_tensor else (a,)
    return _make(out, parents, back)


def mul(a: Tensor, b) -> Tensor:
    b_is_tensor = isinstance(b, Tensor)
    bd = _as_array(b)
    if bd.shape != a.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {bd.shape} differ")
    out = a.data * bd
    ad = a.data

    def back(g: np.ndarray) -> None:
        _accum(a, g * bd)
        if b_is_tensor:
            _accum(b, g * ad)

    parents = (a, b) if b_is_tensor else (a,)
    return _make(out, parents, back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g: np.ndarray) -> None:
        _accum(a, g * c)

    return _make(a.data * c, (a,), back)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    orig = a.shape

    def back(g: np.ndarray) -> None:
        _accum(a, g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g: np.ndarray) -> None:
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), back)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat of an empty sequence")
    base = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != len(base) or any(
            i != axis and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError(f"concat: shapes {parts[0].shape} and {p.shape} "
                             f"differ off axis {axis}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def back(g: np.ndarray) -> None:
        offset = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            _accum(p, g[tuple(sl)])
            offset += size

    return _make(out, tuple(parts), back)


def select(a: Tensor, axis: int, index: int) -> Tensor:
    """Pick one slice along an axis (the axis disappears)."""
    out = np.take(a.data, index, axis=axis)
    shape = a.shape

    def back(g: np.ndarray) -> None:
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        _accum(a, full)

    return _make(out, (a,), back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table; gradient scatter-adds back."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InputError(f"token id out of range [0, {table.shape[0]}): "
                         f"min={ids.min()}, max={ids.max()}")
    out = table.data[ids]

    def back(g: np.ndarray) -> None:
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _make(out, (table,), back)


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def back(g: np.ndarray) -> None:
        if axis is None:
            _accum(a, np.broadcast_to(g, shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, shape).copy())

    return _make(out, (a,), back)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.shape

    def back(g: np.ndarray) -> None:
        if axis is None:
            _accum(a, np.broadcast_to(g / n, shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg / n, shape).copy())

    return _make(out, (a,), back)


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error over all elements; b may be a constant array."""
    b_is_tensor = isinstance(b, Tensor)
    bd = _as_array(b)
    if bd.shape != a.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {bd.shape} differ")
    diff = a.data - bd
    n = diff.size
    out = np.asarray((diff * diff).sum() / n)

    def back(g: np.ndarray) -> None:
        d = g * 2.0 * diff / n
        _accum(a, d)
        if b_is_tensor:
            _accum(b, -d)

    parents = (a, b) if b_is_tensor else (a,)
    return _make(out, parents, back)


# ---------------------------------------------------------------------------
# nonlinearities and normalizations


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = a.data * mask

    def back(g: np.ndarray) -> None:
        _accum(a, g * mask)

    return _make(out, (a,), back)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation (BERT's activation)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def back(g: np.ndarray) -> None:
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        _accum(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))

    return _make(out, (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along one axis, computed with max subtraction for stability."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g: np.ndarray) -> None:
        _accum(a, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _make(s, (a,), back)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def back(g: np.ndarray) -> None:
        _accum(a, g - s * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must be ({d},), got "
                         f"{gamma.shape} and {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def back(g: np.ndarray) -> None:
        lead = tuple(range(g.ndim - 1))
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=lead))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=lead))
        if x.requires_grad:
            gy = g * gamma.data
            _accum(x, inv * (gy - gy.mean(axis=-1, keepdims=True)
                             - xhat * (gy * xhat).mean(axis=-1, keepdims=True)))

    return _make(out, (x, gamma, beta), back)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each last-axis slice to unit L2 norm, epsilon-guarded at zero."""
    sq = (x.data * x.data).sum(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(sq + eps)
    out = x.data * inv
    xd = x.data

    def back(g: np.ndarray) -> None:
        dot = (g * xd).sum(axis=-1, keepdims=True)
        _accum(x, inv * g - (inv**3 * dot) * xd)

    return _make(out, (x,), back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in train mode (rate 0 is the identity)."""
    if rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep

    def back(g: np.ndarray) -> None:
        _accum(x, g * mask)

    return _make(x.data * mask, (x,), back)


# ---------------------------------------------------------------------------
# classification losses (primitive level)


def cross_entropy_with_soft_targets(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over rows of -sum(targets * log_softmax(logits)).

    Targets are constants (one-hot rows or a detached soft distribution), so
    no gradient flows into them.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError(f"cross entropy: logits {logits.shape} vs targets "
                         f"{targets.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = logits.data.shape[0] if logits.ndim > 1 else 1
    out = np.asarray(-(targets * logp).sum() / rows)
    probs = np.exp(logp)

    def back(g: np.ndarray) -> None:
        tot = targets.sum(axis=-1, keepdims=True)
        _accum(logits, g * (probs * tot - targets) / rows)

    return _make(out, (logits,), back)


def add_scalars(parts: Iterable[Tensor]) -> Tensor:
    """Sum a sequence of scalar tensors (loss-term combination helper)."""
    parts = list(parts)
    if not parts:
        raise ShapeError("add_scalars of an empty sequence")
    total = parts[0]
    for p in parts[1:]:
        total = add(total, p)
    return total
