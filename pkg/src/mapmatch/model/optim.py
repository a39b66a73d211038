"""Adam optimizer over the named parameter store."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ModelParameters

DEFAULT_LR = 7e-4
DEFAULT_BETAS = (0.9, 0.999)
DEFAULT_EPS = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: ModelParameters,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = DEFAULT_LR,
    betas: tuple[float, float] = DEFAULT_BETAS,
    eps: float = DEFAULT_EPS,
) -> tuple[ModelParameters, AdamState]:
    """One in-place Adam update for every tensor present in ``grads``.

    Tensors without a gradient entry are left untouched, including their
    moment buffers, which keeps frozen components bit-identical.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    correct1 = 1.0 - b1**t
    correct2 = 1.0 - b2**t
    for name, g in grads.items():
        tensor = params.tensors[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(tensor)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(tensor)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        tensor -= lr * (m / correct1) / (np.sqrt(v / correct2) + eps)
    return params, state
