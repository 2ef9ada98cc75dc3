"""
Learning-rate schedules and Adam.

Parameters are updated by rebinding ``Tensor.data``; arrays are never
modified in place.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from numerics.exceptions import ConfigError, ContractError, NumericsError

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


# --------------------------
# SCHEDULES
# --------------------------
def _check_epoch(t, cfg):
    if not 0 <= t <= cfg.epochs:
        raise ContractError(f"epoch index {t} outside [0, {cfg.epochs}]")


def cosine_lr(t, cfg):
    _check_epoch(t, cfg)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * t / cfg.epochs))


def constant_lr(t, cfg):
    _check_epoch(t, cfg)
    return cfg.lr_max


SCHEDULES = {"cosine": cosine_lr, "constant": constant_lr}


def learning_rate(t, cfg):
    try:
        schedule = SCHEDULES[cfg.lr_schedule]
    except KeyError:
        raise ConfigError(f"unknown lr_schedule {cfg.lr_schedule!r}; expected one of {tuple(SCHEDULES)}") from None
    return schedule(t, cfg)


# --------------------------
# ADAM
# --------------------------
@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=BETA1, beta2=BETA2, eps=EPS):
    """
    One bias-corrected Adam update over ``{name: array}`` mappings.

    Returns the new parameter arrays; ``state`` is advanced. A missing
    gradient leaves its parameter untouched.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    updated = {}
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            updated[name] = value
            continue
        m = beta1 * state.m.get(name, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        updated[name] = (value - step).astype(value.dtype, copy=False)
    return updated


class Adam:
    def __init__(self, named_parameters, beta1=BETA1, beta2=BETA2, eps=EPS):
        self.params = dict(named_parameters)
        self.state = AdamState()
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr):
        values = {name: p.data for name, p in self.params.items()}
        grads = {name: p.grad for name, p in self.params.items()}
        updated = adam_step(values, grads, self.state, lr, self.beta1, self.beta2, self.eps)
        for name, p in self.params.items():
            p.data = updated[name]
