"""AdamW with a single-cycle cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamWConfig", "AdamWState", "cosine_lr", "adamw_step"]


@dataclass
class AdamWConfig:
    lr: float = 0.00025
    weight_decay: float = 0.00005
    total_steps: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamWState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def cosine_lr(lr0: float, t: int, total: int) -> float:
    """``lr0 * 0.5 * (1 + cos(pi * t / total))``, held at 0 once ``t >= total``."""
    if total <= 0:
        return lr0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * min(t, total) / total))


def adamw_step(params: dict, grads: dict, state: AdamWState, t: int, config: AdamWConfig) -> float:
    """Update ``params`` in place for step ``t`` (0-based); returns the lr used.

    Weight decay is decoupled: ``p -= lr_t * (adam_direction + wd * p)``.
    """
    if params.keys() != grads.keys():
        raise ValueError(f"parameter/gradient keys differ: {sorted(params)} vs {sorted(grads)}")
    lr = cosine_lr(config.lr, t, config.total_steps)
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** (t + 1)
    c2 = 1.0 - b2 ** (t + 1)
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = (m / c1) / (np.sqrt(v / c2) + config.eps)
        p -= lr * (step + config.weight_decay * p)
    return lr
