"""Dense float64 tensors with eager graph recording and reverse-mode differentiation.

Every operation returns a new :class:`Tensor`. When any input requires a
gradient, the result records its parents and a closure mapping the upstream
gradient to one gradient per parent. :func:`backward` replays the closures in
reverse recording order.

Broadcasting is deliberately narrow: two operands must have equal shapes, or
the smaller one must match the trailing dimensions of the larger (bias
addition). Everything else raises :class:`DimensionError`.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from dticu.errors import ConfigError, ContractError, DegenerateMaskError, DimensionError

_order = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_order")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._order = next(_order)

    # -- introspection -------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # -- operators --------------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a constant")
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._order = next(_order)
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward if track else None
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf requiring grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._order in nodes:
            continue
        nodes[node._order] = node
        stack.extend(node._parents)

    grads = {loss._order: np.ones_like(loss.data)}
    for key in sorted(nodes, reverse=True):
        node = nodes[key]
        g = grads.pop(key, None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent._order)
            grads[parent._order] = pg if prev is None else prev + pg


# -- broadcasting helpers -------------------------------------------------------------


def _check_broadcast(a: tuple, b: tuple, op: str) -> tuple:
    if a == b:
        return a
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if big[len(big) - len(small):] == small:
        return big
    raise DimensionError(f"{op}: shapes {a} and {b} are not trailing-broadcast compatible")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


# -- elementwise ----------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), bw)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = expit(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def softplus(x) -> Tensor:
    """log(1 + exp(x)), stable for large |x|."""
    x = as_tensor(x)
    y = np.logaddexp(0.0, x.data)
    return _result(y, (x,), lambda g: (g * expit(x.data),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    return mul(x, sigmoid(x))


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def dropout(x, p: float, rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs an explicit generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# -- shape ops ------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        axes = list(range(x.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    basic = _is_basic_index(idx)

    def bw(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _result(x.data[idx], (x,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise DimensionError(
                f"concat: shapes {[t.shape for t in tensors]} differ outside axis {axis}"
            )
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                for t in tensors]
    return concat(expanded, axis=axis)


def embedding(table, idx) -> Tensor:
    """Row gather ``table[idx]``; the gradient scatter-adds back into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(f"embedding index out of range [0, {table.shape[0]})")

    def bw(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(table.data[idx], (table,), bw)


# -- reductions -----------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = math.prod(x.shape[a] for a in axes)
    return mul(tsum(x, axis=axes, keepdims=keepdims), 1.0 / count)


# -- linear algebra -------------------------------------------------------------------


_MIN_COLS = 4


def _mm(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # BLAS picks different kernels (and rounding) for one-row products and for
    # products with fewer than four columns, depending on the row count.
    # Zero-padding both up to those minima makes each output row bit-identical
    # however many rows are computed together.
    rows, cols = x.shape[-2], y.shape[-1]
    if rows < 2:
        x = np.concatenate([x, np.zeros_like(x)], axis=-2)
    if cols < _MIN_COLS:
        pad = np.zeros(y.shape[:-1] + (_MIN_COLS - cols,))
        y = np.concatenate([y, pad], axis=-1)
    out = np.matmul(x, y)
    if rows < 2 or cols < _MIN_COLS:
        out = out[..., :rows, :cols]
    return out


def matmul(a, b) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` (shared right operand) or batched with equal leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    shared = b.ndim == 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions differ for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if shared:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return ga, gb

    return _result(_mm(ad, bd), (a, b), bw)


def softmax_lastdim(x) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty last dimension")
    if np.isnan(x.data).any():
        raise FloatingPointError("softmax input contains NaN")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must match last dim {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gamma.data

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = rstd * (gh - gh.mean(axis=-1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + beta.data, (x, gamma, beta), bw)


def scaled_dot_attention(q, k, v, mask: np.ndarray | None = None, return_weights: bool = False):
    """softmax(q kᵀ / sqrt(d) + bias) v, with bias = -inf wherever ``mask`` is False.

    ``mask`` is a boolean array broadcastable to ``[..., T_q, T_k]``; True means
    the query may attend to that key.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: query width {q.shape} differs from key width {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: {k.shape[-2]} keys but {v.shape[-2]} values")
    if not (q.shape[:-2] == k.shape[:-2] == v.shape[:-2]):
        raise DimensionError(
            f"attention: batch dimensions differ for {q.shape}, {k.shape}, {v.shape}"
        )
    scale = 1.0 / math.sqrt(q.shape[-1])
    kt = np.swapaxes(k.data, -1, -2)
    scores = _mm(q.data, kt) * scale
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise DegenerateMaskError("attention mask leaves a query row with no admissible key")
        scores = np.where(mask, scores, -np.inf)
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    qd, kd, vd = q.data, k.data, v.data

    def bw(g):
        gv = np.matmul(np.swapaxes(p, -1, -2), g)
        gp = np.matmul(g, np.swapaxes(vd, -1, -2))
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        return np.matmul(gs, kd), np.matmul(np.swapaxes(gs, -1, -2), qd), gv

    out = _result(_mm(p, vd), (q, k, v), bw)
    return (out, p) if return_weights else out


def causal_mask(t: int) -> np.ndarray:
    """Lower-triangular boolean mask: position i may attend to j <= i."""
    return np.tril(np.ones((t, t), dtype=bool))

