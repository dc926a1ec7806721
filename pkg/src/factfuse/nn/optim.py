"""Adam with bias correction."""
from __future__ import annotations

import numpy as np

from factfuse.errors import NonFiniteGradient

from .params import ParameterStore

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adam_step(
    store: ParameterStore,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPS,
) -> ParameterStore:
    """Apply one Adam update in place and zero the gradients.

    All gradients are checked before anything is touched, so a non-finite
    gradient leaves values, moments and ``step_count`` unchanged.
    """
    for name, p in store.entries.items():
        if not np.isfinite(p.grad).all():
            raise NonFiniteGradient(name)
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in store.entries.values():
        p.m *= beta1
        p.m += (1.0 - beta1) * p.grad
        p.v *= beta2
        p.v += (1.0 - beta2) * p.grad**2
        p.value -= lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)
        p.grad[...] = 0.0
    return store
