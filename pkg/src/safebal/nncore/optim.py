"""AdamW with decoupled weight decay, plus global-norm gradient clipping.

Parameters and gradients are dicts of name -> float64 ndarray.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, TrainingError


@dataclass
class AdamWConfig:
    learning_rate: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    epochs: int = 30
    grad_clip_norm: float | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be > 0")


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adamw_state(params) -> AdamWState:
    return AdamWState(
        step=0,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adamw_step(params, grads, state, config: AdamWConfig):
    """One AdamW update, in place. Returns (params, state).

    Weight decay is decoupled: applied directly to the parameters, not mixed
    into the gradient-based moments. Moments are bias-corrected.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    lr = config.learning_rate
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if config.weight_decay:
            p -= lr * config.weight_decay * p
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + config.epsilon)
    return params, state


def clip_grad_norm(grads, max_norm: float = 1.0):
    """Scale all gradients so their global L2 norm is at most max_norm.

    Returns (grads, global_norm_before_clipping). Zero gradients pass through.
    """
    if max_norm <= 0:
        raise ConfigError("max_norm must be > 0")
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.ravel(), g.ravel()))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return grads, norm
