from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import UNetModel


class NoGradientsError(RuntimeError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: UNetModel, **kw) -> "AdamState":
        state = cls(**kw)
        state.m = {k: np.zeros_like(p) for k, p in model.params.items()}
        state.v = {k: np.zeros_like(p) for k, p in model.params.items()}
        return state


def adam_step(model: UNetModel, state: AdamState, learning_rate: float) -> None:
    """Bias-corrected Adam update from the accumulated gradients, which are then cleared."""
    if not model.has_grads:
        raise NoGradientsError("no accumulated gradients")
    if not state.m:
        state.m = {k: np.zeros_like(p) for k, p in model.params.items()}
        state.v = {k: np.zeros_like(p) for k, p in model.params.items()}
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in model.params.items():
        g = model.grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        update = learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        model.params[name] = (p - update).astype(p.dtype)
    model.zero_grad()
