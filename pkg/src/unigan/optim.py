"""Adam (generator, discriminator) and look-ahead Nesterov momentum (teacher)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .nets import Params


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class MomentumState:
    lr: float = 0.03
    mu: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def _check_keys(params: Params, grads: Mapping[str, np.ndarray]) -> None:
    want = {k for k, p in params.items() if p.trainable}
    if set(grads) != want:
        raise KeyError(f"gradient keys {sorted(set(grads) ^ want)} do not match trainable parameters")


def adam_step(params: Params, grads: Mapping[str, np.ndarray], state: AdamState) -> None:
    _check_keys(params, grads)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def nesterov_step(
    params: Params,
    grad_fn: Callable[[Mapping[str, np.ndarray]], Mapping[str, np.ndarray]],
    state: MomentumState,
) -> None:
    """v <- mu v - lr grad(theta + mu v); theta <- theta + v.

    ``grad_fn`` receives the look-ahead point as a name -> array mapping.
    """
    vel = {k: state.velocity.get(k, np.zeros_like(p.data)) for k, p in params.items() if p.trainable}
    lookahead = {k: params[k].data + state.mu * v for k, v in vel.items()}
    grads = grad_fn(lookahead)
    _check_keys(params, grads)
    for k, v in vel.items():
        v = state.mu * v - state.lr * grads[k]
        state.velocity[k] = v
        params[k].data = params[k].data + v
