"""Parameter containers and transformer layers on top of :mod:`dticu.tensor`."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from dticu import tensor as T
from dticu.errors import ConfigError
from dticu.tensor import Tensor


class Module:
    """Collects parameters from attributes in definition order.

    Tensors requiring grad are parameters; nested modules, lists and dicts of
    modules or tensors are walked recursively.
    """

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for name, value in vars(self).items():
            out.extend(_walk(value, f"{prefix}{name}"))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _walk(value, name):
    if isinstance(value, Tensor):
        return [(name, value)] if value.requires_grad else []
    if isinstance(value, Module):
        return value.named_parameters(prefix=f"{name}.")
    if isinstance(value, (list, tuple)):
        return [item for i, v in enumerate(value) for item in _walk(v, f"{name}.{i}")]
    if isinstance(value, dict):
        return [item for k, v in value.items() for item in _walk(v, f"{name}.{k}")]
    return []


def _param(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 scale: float = 1.0):
        self.weight = _param(rng.normal(0.0, scale / math.sqrt(d_in), size=(d_in, d_out)))
        self.bias = _param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = _param(np.ones(d))
        self.beta = _param(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        if d % n_heads:
            raise ConfigError(f"d_model {d} is not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        n, t, d = x.shape
        return T.transpose(T.reshape(x, (n, t, self.n_heads, d // self.n_heads)), (0, 2, 1, 3))

    def __call__(self, xq: Tensor, xkv: Tensor, mask=None, weights: list | None = None) -> Tensor:
        """``xq`` [N, Tq, d] attends to ``xkv`` [N, Tk, d]; optional [Tq, Tk] boolean mask."""
        n, tq, d = xq.shape
        q, k, v = self._split(self.q(xq)), self._split(self.k(xkv)), self._split(self.v(xkv))
        att = T.scaled_dot_attention(q, k, v, mask, return_weights=weights is not None)
        if weights is not None:
            att, w = att
            weights.append(w)
        merged = T.reshape(T.transpose(att, (0, 2, 1, 3)), (n, tq, d))
        return self.o(merged)


class FeedForward(Module):
    def __init__(self, d: int, ff_mult: int, rng: np.random.Generator):
        self.up = Linear(d, ff_mult * d, rng)
        self.down = Linear(ff_mult * d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.silu(self.up(x)))


class TransformerBlock(Module):
    """Pre-norm self-attention block."""

    def __init__(self, d: int, n_heads: int, ff_mult: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.norm2 = LayerNorm(d)
        self.ff = FeedForward(d, ff_mult, rng)

    def __call__(self, x: Tensor, mask=None, weights: list | None = None) -> Tensor:
        h = self.norm1(x)
        x = x + self.attn(h, h, mask, weights)
        return x + self.ff(self.norm2(x))


class CrossAttentionBlock(Module):
    """Pre-norm cross-attention: ``x`` queries ``context``; residual onto ``x``."""

    def __init__(self, d: int, n_heads: int, ff_mult: int, rng: np.random.Generator):
        self.norm_q = LayerNorm(d)
        self.norm_kv = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.norm_ff = LayerNorm(d)
        self.ff = FeedForward(d, ff_mult, rng)

    def __call__(self, x: Tensor, context: Tensor, weights: list | None = None) -> Tensor:
        x = x + self.attn(self.norm_q(x), self.norm_kv(context), None, weights)
        return x + self.ff(self.norm_ff(x))


def block_param_count(d: int, ff_mult: int) -> int:
    attn = 4 * (d * d + d)
    ff = d * ff_mult * d + ff_mult * d + ff_mult * d * d + d
    return attn + ff + 2 * (2 * d)


def cross_block_param_count(d: int, ff_mult: int) -> int:
    return block_param_count(d, ff_mult) + 2 * d


@lru_cache(maxsize=32)
def sinusoidal_table(length: int, d: int) -> np.ndarray:
    """Fixed sinusoidal encoding of hour indices 0..length-1."""
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    table.setflags(write=False)
    return table
