"""Adam with bias correction and an exponential per-epoch learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError


def lr_schedule(lr0, epoch, factor=0.9):
    """Learning rate for ``epoch`` (0-based): lr0 * factor**epoch."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return lr0 * factor ** epoch


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, lr, state):
    """Update ``params`` in place.

    ``params`` and ``grads`` map ids to arrays (or a ParameterStore and its
    grads); ``lr`` is a float or a per-id mapping. Missing grads count as zero.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    items = params.trainable_items() if hasattr(params, "trainable_items") else sorted(params.items())
    for name, p in items:
        arr = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(arr)
        if g.shape != arr.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {arr.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        rate = lr[name] if isinstance(lr, dict) else lr
        if rate:
            arr -= rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
