"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias correction; parameters are updated in place.

    Only names present in ``grads`` are touched, so batch-norm running buffers
    pass through untouched.  A zero gradient leaves a fresh parameter exactly
    unchanged.
    """
    b1, b2 = betas
    state.t += 1
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p, dtype=p.dtype)
            state.v[name] = np.zeros_like(p, dtype=p.dtype)
        m = state.m[name]
        v = state.v[name]
        g = g.astype(p.dtype, copy=False)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p -= (learning_rate * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
    return params, state
