"""EMA teacher upkeep, artificial labels for real samples, and reliability-based selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, no_grad
from .nets import Params, Teacher, teacher_forward


@dataclass(frozen=True)
class AugmentConfig:
    weak_sigma: float = 0.01
    strong_sigma: float = 0.1
    strong_dropout: float = 0.1

    def __post_init__(self):
        if self.weak_sigma < 0 or self.strong_sigma < 0:
            raise ValueError("augmentation sigmas must be >= 0")
        if not 0.0 <= self.strong_dropout < 1.0:
            raise ValueError("strong_dropout must lie in [0, 1)")

    @classmethod
    def for_scale(cls, data_scale: float) -> "AugmentConfig":
        return cls(weak_sigma=0.01 * data_scale, strong_sigma=0.1 * data_scale, strong_dropout=0.1)


@dataclass
class SelfLabelResult:
    labels: np.ndarray
    reliabilities: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.labels)


def weak_augment(x: np.ndarray, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    if aug.weak_sigma == 0:
        return np.array(x, dtype=np.float64)
    return x + rng.normal(0.0, aug.weak_sigma, size=x.shape)


def strong_augment(x: np.ndarray, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    out = np.array(x, dtype=np.float64)
    if aug.strong_sigma > 0:
        out = out + rng.normal(0.0, aug.strong_sigma, size=x.shape)
    if aug.strong_dropout > 0:
        out = out * (rng.random(x.shape) >= aug.strong_dropout)
    return out


def ema_update(ema: Params, live: Params, decay: float) -> None:
    """ema <- decay * ema + (1 - decay) * live, in place on the EMA collection."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must lie in [0, 1], got {decay}")
    if ema.keys() != live.keys():
        raise ShapeError("EMA and live parameter collections differ in names")
    for name, p in ema.items():
        src = live[name].data
        if src.shape != p.data.shape:
            raise ShapeError(f"EMA shape mismatch for {name}: {p.data.shape} vs {src.shape}")
        p.data = decay * p.data + (1.0 - decay) * src


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return np.argmax(np.atleast_2d(logits), axis=1)


def label_reliability(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    probs = _softmax_rows(np.atleast_2d(logits))
    return probs[np.arange(probs.shape[0]), labels]


def ema_logits(x: np.ndarray, teacher: Teacher, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    with no_grad():
        return teacher_forward(weak_augment(x, aug, rng), teacher, use_ema=True).data


def self_label(x_r: np.ndarray, teacher: Teacher, aug: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return argmax_labels(ema_logits(x_r, teacher, aug, rng))


def reliability(x_r: np.ndarray, labels: np.ndarray, teacher: Teacher, aug: AugmentConfig,
                rng: np.random.Generator) -> np.ndarray:
    """Softmax mass the EMA teacher gives ``labels``.

    Pass an rng in the same state as the one used for ``self_label`` so both
    see the same weak-augmentation draw; ``label_batch`` does this in one pass.
    """
    return label_reliability(ema_logits(x_r, teacher, aug, rng), labels)


def self_attention_mask(reliabilities: np.ndarray, th: float) -> np.ndarray:
    if not 0.0 <= th <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {th}")
    return (np.asarray(reliabilities) >= th).astype(np.int64)


def label_batch(x_r: np.ndarray, teacher: Teacher, aug: AugmentConfig, th: float,
                rng: np.random.Generator) -> SelfLabelResult:
    """One EMA forward pass on a single weak draw serves labels, reliabilities and mask."""
    logits = ema_logits(x_r, teacher, aug, rng)
    labels = argmax_labels(logits)
    rel = label_reliability(logits, labels)
    return SelfLabelResult(labels, rel, self_attention_mask(rel, th))
