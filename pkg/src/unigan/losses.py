"""Adversarial, conditional, teacher and gradient-penalty losses."""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Mapping

import numpy as np

from .autodiff import (
    Tensor,
    enable_grad,
    gather_rows,
    grad,
    logsumexp,
    mean,
    relu,
    reshape,
    take,
    tensor_sum,
)
from .data import LabeledBatch
from .nets import Discriminator, Generator, Teacher, detached, discriminator_forward, generator_forward, teacher_forward
from .self_labeling import AugmentConfig, SelfLabelResult, strong_augment

LABEL_SOURCES = ("real", "artificial", "both", "none")


def _zero() -> Tensor:
    return Tensor(0.0)


@dataclass
class LossBreakdown:
    l_d_u: Tensor = None
    l_d_c: Tensor = None
    l_g_u: Tensor = None
    l_g_c: Tensor = None
    l_c: Tensor = None
    r1: Tensor = None

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) is None:
                setattr(self, f.name, _zero())

    @property
    def l_d(self) -> Tensor:
        return self.l_d_u + self.l_d_c + self.r1

    @property
    def l_g(self) -> Tensor:
        return self.l_g_u + self.l_g_c

    def floats(self) -> dict[str, float]:
        out = {f.name: getattr(self, f.name).item() for f in fields(self)}
        out["l_d"] = out["l_d_u"] + out["l_d_c"] + out["r1"]
        out["l_g"] = out["l_g_u"] + out["l_g_c"]
        return out


def hinge(t) -> Tensor:
    """max(0, 1 - t), elementwise."""
    t = t if isinstance(t, Tensor) else Tensor(t)
    return relu(1.0 - t)


def _runner_up(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    masked = logits.copy()
    masked[np.arange(len(targets)), targets] = -np.inf
    return np.argmax(masked, axis=1)


def _as_rows(logits) -> tuple[Tensor, bool]:
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    if logits.ndim == 1:
        return reshape(logits, (1, logits.shape[0])), True
    return logits, False


def _check_targets(targets, n_classes: int) -> np.ndarray:
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise IndexError(f"target out of range [0, {n_classes}): {targets.min()}..{targets.max()}")
    return targets


def multiclass_hinge(targets, logits) -> Tensor:
    """Crammer-Singer hinge per row: max(0, 1 - x[t] + max_{i != t} x[i]).

    A 1-D ``logits`` with a scalar target gives a scalar; 2-D gives one value per row.
    """
    rows, single = _as_rows(logits)
    targets = _check_targets(targets, rows.shape[1])
    rival = _runner_up(rows.data, targets)
    out = relu(1.0 - gather_rows(rows, targets) + gather_rows(rows, rival))
    return tensor_sum(out) if single else out


def softmax_cross_entropy(targets, logits) -> Tensor:
    rows, single = _as_rows(logits)
    targets = _check_targets(targets, rows.shape[1])
    out = logsumexp(rows, axis=1) - gather_rows(rows, targets)
    return tensor_sum(out) if single else out


def _masked_mean(values: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over mask==1 entries; an empty selection contributes exactly 0."""
    n = int(mask.sum())
    if n == 0:
        return _zero()
    return tensor_sum(values * Tensor(mask.astype(np.float64))) / float(n)


def r1_penalty(d_u: Callable[[Tensor], Tensor], x_r: np.ndarray, gamma: float) -> Tensor:
    """(gamma / 2) * mean_i ||grad_x d_u(x_i)||^2, differentiable in d_u's parameters."""
    if gamma == 0:
        return _zero()
    with enable_grad():
        x = Tensor(np.asarray(x_r, dtype=np.float64), requires_grad=True)
        out = d_u(x)
        if not out.requires_grad:
            return _zero()
        (gx,) = grad(tensor_sum(out), [x], create_graph=True)
        sq = tensor_sum(gx * gx, axis=1)
        return mean(sq) * (gamma / 2.0)


def discriminator_loss(
    batch: LabeledBatch,
    fakes: np.ndarray,
    fake_labels: np.ndarray,
    self_label: SelfLabelResult | None,
    disc: Discriminator,
    gamma: float = 10.0,
    label_source: str = "real",
    n_standard: int | None = None,
    params: Mapping[str, Tensor] | None = None,
) -> LossBreakdown:
    """Hinge + conditional multi-class hinge + R1 for one discriminator step.

    ``label_source`` picks which labels condition the real samples:
    "real" uses y where visible and (artificial label, mask) elsewhere;
    "artificial" ignores y; "both" adds the artificial term on labeled
    samples too; "none" drops the conditional loss entirely.
    Reals and fakes here are constants; the first ``n_standard`` reals feed
    the unconditional hinge and R1, the whole real batch feeds the conditional terms.
    """
    if label_source not in LABEL_SOURCES:
        raise ValueError(f"label_source must be one of {LABEL_SOURCES}, got {label_source!r}")
    x_r = np.asarray(batch.x, dtype=np.float64)
    n = x_r.shape[0]
    has_label = np.asarray(batch.has_label, dtype=bool)
    if has_label.shape != (n,) or np.shape(batch.y) != (n,):
        raise ValueError(f"batch of {n} samples has {has_label.shape[0]} flags and {np.shape(batch.y)[0]} labels")
    if self_label is not None and len(self_label) != n:
        raise ValueError(f"self-label result covers {len(self_label)} samples, batch has {n}")
    if len(fake_labels) != len(fakes):
        raise ValueError("fakes and fake labels differ in length")
    if self_label is None and label_source != "none" and not (label_source == "real" and has_label.all()):
        raise ValueError(f"label_source={label_source!r} needs a self-label result")
    K = disc.n_classes
    params = disc.params if params is None else params
    ns = n if n_standard is None else min(n_standard, n)

    u_real, c_real = discriminator_forward(x_r, disc, params)
    u_fake, c_fake = discriminator_forward(np.asarray(fakes), disc, params)
    l_d_u = mean(hinge(take(u_real, slice(0, ns)))) + mean(hinge(-u_fake))

    l_d_c = _zero()
    if label_source != "none":
        if label_source in ("real", "both"):
            y = np.where(has_label, batch.y, 0)
            l_d_c = l_d_c + _masked_mean(multiclass_hinge(y, c_real), has_label)
        if label_source in ("artificial", "both"):
            selected = self_label.mask.astype(bool)
        else:
            selected = self_label.mask.astype(bool) & ~has_label if self_label is not None else np.zeros(n, bool)
        if selected.any():
            l_d_c = l_d_c + _masked_mean(multiclass_hinge(self_label.labels, c_real), selected)
        l_d_c = l_d_c + mean(multiclass_hinge(np.asarray(fake_labels) + K, c_fake))

    r1 = r1_penalty(lambda x: discriminator_forward(x, disc, params)[0], x_r[:ns], gamma)
    return LossBreakdown(l_d_u=l_d_u, l_d_c=l_d_c, r1=r1)


def generator_loss(
    z: np.ndarray,
    c: np.ndarray,
    gen: Generator,
    disc: Discriminator,
    nonsaturating: bool = False,
    conditional: bool = True,
) -> LossBreakdown:
    """Generator hinge terms; the discriminator enters as constants."""
    x_f = generator_forward(z, c, gen)
    u, cls = discriminator_forward(x_f, disc, detached(disc.params))
    l_g_u = mean(-u) if nonsaturating else mean(hinge(u))
    l_g_c = mean(multiclass_hinge(c, cls)) if conditional else None
    return LossBreakdown(l_g_u=l_g_u, l_g_c=l_g_c)


def teacher_loss(
    fakes: np.ndarray,
    c: np.ndarray,
    teacher: Teacher,
    aug: AugmentConfig,
    rng: np.random.Generator,
    params: Mapping[str, Tensor] | None = None,
) -> Tensor:
    """Mean cross-entropy of the live teacher on strongly augmented fakes."""
    x = strong_augment(np.asarray(fakes), aug, rng)
    return mean(softmax_cross_entropy(c, teacher_forward(x, teacher, params=params)))
