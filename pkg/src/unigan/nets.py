"""Fully-connected generator, two-headed discriminator and teacher."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Parameter, ShapeError, Tensor, concat, leaky_relu, matmul, reshape, xavier_uniform_init

Params = dict[str, Parameter]


def _dense(params: Params, prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator) -> None:
    params[f"{prefix}.w"] = Parameter(f"{prefix}.w", xavier_uniform_init(fan_in, fan_out, rng))
    params[f"{prefix}.b"] = Parameter(f"{prefix}.b", np.zeros(fan_out))


def _linear(x: Tensor, params: Mapping[str, Tensor], prefix: str) -> Tensor:
    return matmul(x, params[f"{prefix}.w"]) + params[f"{prefix}.b"]


def _trunk(x: Tensor, params: Mapping[str, Tensor], prefix: str, depth: int) -> Tensor:
    h = x
    for i in range(depth):
        h = leaky_relu(_linear(h, params, f"{prefix}.h{i}"))
    return h


def _build_trunk(params: Params, prefix: str, width_in: int, hidden: Sequence[int], rng) -> int:
    for i, w in enumerate(hidden):
        _dense(params, f"{prefix}.h{i}", width_in, w, rng)
        width_in = w
    return width_in


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{labels.min()}, {labels.max()}]")
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def detached(params: Mapping[str, Parameter]) -> dict[str, Tensor]:
    """Constant views of a parameter collection (no gradient path)."""
    return {k: Tensor(p.data) for k, p in params.items()}


@dataclass
class Generator:
    params: Params
    latent_dim: int
    n_classes: int
    output_dim: int
    depth: int = 3


@dataclass
class Discriminator:
    params: Params
    input_dim: int
    n_classes: int
    depth: int = 3


@dataclass
class Teacher:
    params: Params
    input_dim: int
    n_classes: int
    depth: int = 2
    ema: Params = field(default_factory=dict)


def init_generator(rng, latent_dim=8, n_classes=10, output_dim=2, hidden=(128, 128, 128)) -> Generator:
    params: Params = {}
    width = _build_trunk(params, "g", latent_dim + n_classes, hidden, rng)
    _dense(params, "g.out", width, output_dim, rng)
    return Generator(params, latent_dim, n_classes, output_dim, len(hidden))


def init_discriminator(rng, input_dim=2, n_classes=10, hidden=(128, 128, 128)) -> Discriminator:
    params: Params = {}
    width = _build_trunk(params, "d", input_dim, hidden, rng)
    _dense(params, "d.u", width, 1, rng)
    _dense(params, "d.c", width, 2 * n_classes, rng)
    return Discriminator(params, input_dim, n_classes, len(hidden))


def init_teacher(rng, input_dim=2, n_classes=10, hidden=(64, 64)) -> Teacher:
    params: Params = {}
    width = _build_trunk(params, "t", input_dim, hidden, rng)
    _dense(params, "t.out", width, n_classes, rng)
    ema = {k: Parameter(k, p.data.copy(), trainable=False) for k, p in params.items()}
    return Teacher(params, input_dim, n_classes, len(hidden), ema)


def _check_input(x: Tensor, dim: int, who: str) -> None:
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{who}: expected input of shape (batch, {dim}), got {x.shape}")


def generator_forward(z, c, gen: Generator, params: Mapping[str, Tensor] | None = None) -> Tensor:
    params = gen.params if params is None else params
    z = z if isinstance(z, Tensor) else Tensor(z)
    _check_input(z, gen.latent_dim, "generator")
    h = concat([z, Tensor(one_hot(c, gen.n_classes))], axis=1)
    return _linear(_trunk(h, params, "g", gen.depth), params, "g.out")


def discriminator_forward(x, disc: Discriminator, params: Mapping[str, Tensor] | None = None):
    """Returns (unconditional logit of shape (batch,), class logits of shape (batch, 2K))."""
    params = disc.params if params is None else params
    x = x if isinstance(x, Tensor) else Tensor(x)
    _check_input(x, disc.input_dim, "discriminator")
    h = _trunk(x, params, "d", disc.depth)
    u = _linear(h, params, "d.u")
    return reshape(u, (x.shape[0],)), _linear(h, params, "d.c")


def teacher_forward(x, teacher: Teacher, use_ema: bool = False, params: Mapping[str, Tensor] | None = None) -> Tensor:
    if params is None:
        params = teacher.ema if use_ema else teacher.params
    x = x if isinstance(x, Tensor) else Tensor(x)
    _check_input(x, teacher.input_dim, "teacher")
    return _linear(_trunk(x, params, "t", teacher.depth), params, "t.out")
