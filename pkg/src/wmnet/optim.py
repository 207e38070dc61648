"""ADAM with bias-corrected moment estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import NonFiniteError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray] | None,
              state: AdamState) -> AdamState:
    """Apply one ADAM update in place.

    ``grads`` defaults to each parameter's accumulated ``.grad``; a parameter
    with no gradient is treated as having a zero gradient.  All gradients are
    checked for finiteness before any parameter is touched.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}

    checked: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}", name=name)
        checked[name] = g

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = checked[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        state.m[name] = m.astype(p.data.dtype, copy=False)
        state.v[name] = v.astype(p.data.dtype, copy=False)
        update = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)
    return state
