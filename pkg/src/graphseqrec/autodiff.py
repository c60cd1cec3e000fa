"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every derived :class:`Tensor` records its parents and a closure that applies
the chain rule, so :func:`backward` can walk the graph once in reverse
topological order and accumulate ``grad`` into every leaf that was created
with ``requires_grad=True``.

The op set is deliberately small: exactly what dot-product attention,
layer-normalized feed-forward stacks, graph propagation, and the
contrastive / binary-cross-entropy losses in this package need.
Broadcasting is kept narrow (same shape, bias-style trailing axes,
per-axis size-1 expansion, scalars); anything else raises
:class:`ShapeMismatch` naming both shapes.  All storage is row-major
64-bit, which keeps finite-difference checks meaningful.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class DegenerateRow(ValueError):
    """A row violates an operation precondition (fully masked, zero norm)."""


class Tensor:
    """A dense float64 array plus an optional gradient accumulator.

    Leaves are built directly (``Tensor(data, requires_grad=...)``); interior
    nodes are produced by the ops in this module and carry the tape record
    (parents + backward closure) used by :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    # operator sugar; scalars mean python numbers
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Tensor) else -other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return total_sum(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, op={self.op}, requires_grad={self.requires_grad})"


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.op = op
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient ``g`` back to ``shape`` by summing broadcast axes."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a_shape: tuple, b_shape: tuple, op: str) -> None:
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {list(a_shape)} and {list(b_shape)} do not align") from None


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar (shape ``()``).  The recorded graph is walked
    exactly once per node, in reverse topological order.
    """
    if loss.shape != ():
        raise ShapeMismatch(f"backward expects a scalar loss, got shape {list(loss.shape)}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise and broadcast arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        data = a.data + float(b)

        def back_const(g, a=a):
            _accumulate(a, g)

        return _node(data, (a,), back_const, "add")
    _check_broadcast(a.shape, b.shape, "add")
    data = a.data + b.data

    def back(g, a=a, b=b):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), back, "add")


def neg(a: Tensor) -> Tensor:
    def back(g, a=a):
        _accumulate(a, -g)

    return _node(-a.data, (a,), back, "neg")


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        data = a.data * c

        def back_const(g, a=a, c=c):
            _accumulate(a, g * c)

        return _node(data, (a,), back_const, "mul")
    _check_broadcast(a.shape, b.shape, "mul")
    data = a.data * b.data

    def back(g, a=a, b=b):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), back, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.  Supports 2D x 2D, batched x 2D, and batched x batched."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2D operands, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dimensions disagree for {list(a.shape)} x {list(b.shape)}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatch(f"matmul: batch dimensions disagree for {list(a.shape)} x {list(b.shape)}")
    if b.ndim > 2 and a.ndim == 2:
        raise ShapeMismatch(f"matmul: 2D x batched unsupported ({list(a.shape)} x {list(b.shape)})")
    data = a.data @ b.data

    def back(g, a=a, b=b):
        if a.requires_grad:
            _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                n = g.shape[-1]
                _accumulate(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _node(data, (a, b), back, "matmul")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeMismatch(f"transpose needs a >=2D tensor, got shape {list(a.shape)}")
    data = np.swapaxes(a.data, -1, -2)

    def back(g, a=a):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _node(data, (a,), back, "transpose")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def back(g, a=a, data=data):
        _accumulate(a, g * (data > 0.0))

    return _node(data, (a,), back, "relu")


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def back(g, a=a, data=data):
        _accumulate(a, g * (1.0 - data * data))

    return _node(data, (a,), back, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid(a.data)

    def back(g, a=a, data=data):
        _accumulate(a, g * data * (1.0 - data))

    return _node(data, (a,), back, "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), overflow-safe; the gradient is sigmoid(x)."""
    data = np.logaddexp(0.0, a.data)

    def back(g, a=a):
        _accumulate(a, g * _sigmoid(a.data))

    return _node(data, (a,), back, "softplus")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def back(g, a=a):
        _accumulate(a, g / a.data)

    return _node(data, (a,), back, "log")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def back(g, a=a, data=data):
        _accumulate(a, g * data)

    return _node(data, (a,), back, "exp")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def total_sum(a: Tensor) -> Tensor:
    data = a.data.sum()

    def back(g, a=a):
        _accumulate(a, np.broadcast_to(g, a.shape).copy() if a.shape else np.asarray(g))

    return _node(np.asarray(data), (a,), back, "sum")


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g, a=a, axis=axis, keepdims=keepdims):
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _node(data, (a,), back, "sum_axis")


# ---------------------------------------------------------------------------
# row-structured ops (last axis treated as the row)
# ---------------------------------------------------------------------------

def _first_bad_row(bad: np.ndarray) -> tuple:
    idx = np.argwhere(bad)
    return tuple(int(v) for v in idx[0])


def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise softmax over the last axis.

    ``mask`` is a boolean array of the same shape; masked entries produce
    exact zeros and each row must keep at least one unmasked entry.
    Stabilized by subtracting the row max over unmasked entries.
    """
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeMismatch(f"softmax_rows: mask shape {list(mask.shape)} != input shape {list(x.shape)}")
        alive = mask.any(axis=-1)
        if not alive.all():
            raise DegenerateRow(f"softmax_rows: fully masked row at index {_first_bad_row(~alive)}")
        shifted = np.where(mask, x.data, -np.inf)
        rowmax = shifted.max(axis=-1, keepdims=True)
        e = np.exp(x.data - rowmax) * mask
    else:
        rowmax = x.data.max(axis=-1, keepdims=True)
        e = np.exp(x.data - rowmax)
    data = e / e.sum(axis=-1, keepdims=True)

    def back(g, x=x, data=data):
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(x, data * (g - inner))

    return _node(data, (x,), back, "softmax_rows")


def logsumexp_rows(x: Tensor) -> Tensor:
    """log(sum(exp(row))) per row over the last axis, stabilized."""
    rowmax = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - rowmax)
    s = e.sum(axis=-1, keepdims=True)
    data = (rowmax + np.log(s)).squeeze(-1)

    def back(g, x=x, e=e, s=s):
        _accumulate(x, np.expand_dims(g, -1) * (e / s))

    return _node(data, (x,), back, "logsumexp_rows")


def unit_rows(x: Tensor) -> Tensor:
    """Scale each row (last axis) to unit L2 norm; zero-norm rows are an error."""
    norms = np.linalg.norm(x.data, axis=-1, keepdims=True)
    bad = norms[..., 0] == 0.0
    if bad.any():
        raise DegenerateRow(f"unit_rows: zero-norm row at index {_first_bad_row(bad)}")
    data = x.data / norms

    def back(g, x=x, data=data, norms=norms):
        inner = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(x, (g - data * inner) / norms)

    return _node(data, (x,), back, "unit_rows")


def diagonal(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ShapeMismatch(f"diagonal needs a square 2D tensor, got shape {list(x.shape)}")
    data = np.diagonal(x.data).copy()

    def back(g, x=x):
        gx = np.zeros_like(x.data)
        np.fill_diagonal(gx, g)
        _accumulate(x, gx)

    return _node(data, (x,), back, "diagonal")


# ---------------------------------------------------------------------------
# indexing
# ---------------------------------------------------------------------------

def gather(table: Tensor, ids) -> Tensor:
    """Row lookup: output shape is ids.shape + (row_width,).

    The backward pass scatter-adds, so only gathered rows receive gradient.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeMismatch(f"gather needs a 2D table, got shape {list(table.shape)}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"gather: id out of range for table with {table.shape[0]} rows")
    data = table.data[ids]

    def back(g, table=table, ids=ids):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.shape[1]))
        _accumulate(table, gt)

    return _node(data, (table,), back, "gather")


def select_positions(x: Tensor, positions) -> Tensor:
    """Pick one row per batch entry from a (B, N, d) tensor; returns (B, d)."""
    positions = np.asarray(positions, dtype=np.int64)
    if x.ndim != 3 or positions.shape != (x.shape[0],):
        raise ShapeMismatch(f"select_positions: got shape {list(x.shape)} with positions {list(positions.shape)}")
    batch = np.arange(x.shape[0])
    data = x.data[batch, positions]

    def back(g, x=x, positions=positions, batch=batch):
        gx = np.zeros_like(x.data)
        gx[batch, positions] = g
        _accumulate(x, gx)

    return _node(data, (x,), back, "select_positions")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    data = x.data[..., start:stop].copy()

    def back(g, x=x, start=start, stop=stop):
        gx = np.zeros_like(x.data)
        gx[..., start:stop] = g
        _accumulate(x, gx)

    return _node(data, (x,), back, "slice_cols")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat_cols needs at least one tensor")
    widths = [p.shape[-1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=-1)

    def back(g, parts=tuple(parts), widths=widths):
        offset = 0
        for p, w in zip(parts, widths):
            _accumulate(p, g[..., offset:offset + w])
            offset += w

    return _node(data, parts, back, "concat_cols")


# ---------------------------------------------------------------------------
# structured ops for attention and regularization
# ---------------------------------------------------------------------------

def per_sample_scale(scalars: Tensor, mats: np.ndarray) -> Tensor:
    """out[b] = scalars[b] * mats[b] for a constant stack of matrices.

    ``scalars`` has shape (B, 1); ``mats`` is a fixed (B, ...) array.
    """
    mats = np.asarray(mats, dtype=np.float64)
    if scalars.ndim != 2 or scalars.shape[1] != 1 or scalars.shape[0] != mats.shape[0]:
        raise ShapeMismatch(f"per_sample_scale: scalars {list(scalars.shape)} vs mats {list(mats.shape)}")
    expand = scalars.data.reshape((-1,) + (1,) * (mats.ndim - 1))
    data = expand * mats

    def back(g, scalars=scalars, mats=mats):
        axes = tuple(range(1, mats.ndim))
        _accumulate(scalars, (g * mats).sum(axis=axes).reshape(-1, 1))

    return _node(data, (scalars,), back, "per_sample_scale")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeMismatch(f"layer_norm: gain/bias must be [{width}], got {list(gain.shape)} and {list(bias.shape)}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data

    def back(g, x=x, gain=gain, bias=bias, xhat=xhat, inv=inv, width=width):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, width).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, width).sum(axis=0))
        if x.requires_grad:
            gh = g * gain.data
            m1 = gh.mean(axis=-1, keepdims=True)
            m2 = (gh * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, inv * (gh - m1 - xhat * m2))

    return _node(data, (x, gain, bias), back, "layer_norm")


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no generator is supplied."""
    if rate < 0.0 or rate >= 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    data = x.data * keep

    def back(g, x=x, keep=keep):
        _accumulate(x, g * keep)

    return _node(data, (x,), back, "dropout")
