"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dticu.errors import ConfigError, TrainingStateError
from dticu.tensor.core import Tensor


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """Apply one Adam update in place and clear every parameter's gradient.

    Raises TrainingStateError if any parameter has no gradient.
    """
    missing = [p.name or f"#{i}" for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise TrainingStateError(f"no gradient for parameter(s): {', '.join(missing)}")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    elif len(state.m) != len(params):
        raise TrainingStateError(
            f"optimizer state tracks {len(state.m)} parameters, got {len(params)}"
        )
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step_count
    c2 = 1.0 - b2 ** state.step_count
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


class Adam:
    """Thin stateful wrapper: ``opt.step()`` after ``backward``."""

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
