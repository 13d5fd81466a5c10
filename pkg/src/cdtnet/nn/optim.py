from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np


def fans(shape: Tuple[int, ...]) -> Tuple[int, int]:
    """Fan-in/fan-out: dense (n_in, n_out); conv (width, c_in, c_out)."""
    if len(shape) == 2:
        return shape[0], shape[1]
    if len(shape) == 3:
        width, cin, cout = shape
        return width * cin, width * cout
    raise ValueError(f"cannot derive fans from shape {shape}")


def glorot_init(shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Uniform on +-sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = fans(tuple(shape))
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    l2: float = 0.0,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place.

    L2 decay is coupled: ``l2 * param`` is added to the gradient before the
    moment updates.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in sorted(params):
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        if l2:
            g = g + l2 * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
