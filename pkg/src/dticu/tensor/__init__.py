"""Minimal float64 tensor library with reverse-mode autodiff and Adam."""

from dticu.tensor.core import (
    Tensor,
    add,
    as_tensor,
    backward,
    causal_mask,
    clip,
    concat,
    dropout,
    embedding,
    getitem,
    grad_enabled,
    layer_norm,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    scaled_dot_attention,
    sigmoid,
    silu,
    softmax_lastdim,
    softplus,
    stack,
    sub,
    transpose,
    tsum,
)
from dticu.tensor.optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "causal_mask",
    "clip",
    "concat",
    "dropout",
    "embedding",
    "getitem",
    "grad_enabled",
    "layer_norm",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "reshape",
    "scaled_dot_attention",
    "sigmoid",
    "silu",
    "softmax_lastdim",
    "softplus",
    "stack",
    "sub",
    "transpose",
    "tsum",
]
