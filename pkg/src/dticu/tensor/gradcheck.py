"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable

import numpy as np

from dticu.tensor.core import Tensor, backward


def numerical_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f() / d x by central differences, perturbing ``x.data`` in place."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f().item()
        flat[i] = orig - h
        fm = f().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error; robust to individual near-zero entries."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(f: Callable[[], Tensor], inputs: list[Tensor], h: float = 1e-5) -> list[float]:
    """Relative error between backprop and finite differences for each input."""
    for t in inputs:
        t.grad = None
    backward(f())
    errs = []
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errs.append(relative_error(analytic, numerical_grad(f, t, h)))
    return errs
