"""Adam and the linear learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError


@dataclass
class AdamState:
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(store, state, lr):
    """One bias-corrected Adam update using the gradients held in ``store``.

    Frozen entries (``trainable=False``) are left untouched.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in store.entries.items():
        if not p.trainable:
            continue
        m = state.first.get(name)
        v = state.second.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            v = np.zeros_like(p.value)
        m = b1 * m + (1.0 - b1) * p.grad
        v = b2 * v + (1.0 - b2) * p.grad * p.grad
        state.first[name] = m
        state.second[name] = v
        p.value = np.asarray(p.value - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return store, state


def linear_lr(step, total_steps, lr_start, lr_end):
    if not 0 <= step <= total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return float(lr_start)
    frac = step / total_steps
    return float(lr_start + (lr_end - lr_start) * frac)
