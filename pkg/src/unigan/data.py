"""Gaussian-mixture datasets with partial label visibility."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class MixtureSpec:
    true_class_count: int = 8
    dim: int = 2
    radius: float = 4.0
    sigma: float = 0.2
    seed: int = 0
    centers: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.true_class_count < 1 or self.dim < 1:
            raise ValueError("need at least one component and one dimension")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        c = self.center_array()
        if c.shape != (self.true_class_count, self.dim):
            raise ValueError(f"centers must have shape ({self.true_class_count}, {self.dim}), got {c.shape}")
        diffs = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=-1)
        if np.any(diffs[np.triu_indices(len(c), 1)] == 0):
            raise ValueError("mixture centers must be pairwise distinct")

    def center_array(self) -> np.ndarray:
        if self.centers is not None:
            return np.asarray(self.centers, dtype=np.float64)
        angles = 2 * np.pi * np.arange(self.true_class_count) / self.true_class_count
        ring = np.stack([self.radius * np.cos(angles), self.radius * np.sin(angles)], axis=1)
        if self.dim == 2:
            return ring
        out = np.zeros((self.true_class_count, self.dim))
        out[:, : min(2, self.dim)] = ring[:, : min(2, self.dim)]
        return out


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    has_label: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.has_label is None:
            self.has_label = np.zeros(len(self.y), dtype=bool)
        self.has_label = np.asarray(self.has_label, dtype=bool)

    def __len__(self):
        return len(self.y)


@dataclass
class LabeledBatch:
    """Training view of real samples: ``y`` is -1 wherever ``has_label`` is False."""

    x: np.ndarray
    y: np.ndarray
    has_label: np.ndarray

    def __len__(self):
        return len(self.y)


def make_mixture_dataset(spec: MixtureSpec, n: int, seed: int | None = None) -> Dataset:
    if n < spec.true_class_count:
        raise ValueError(f"n={n} is smaller than the component count {spec.true_class_count}")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    y = rng.integers(0, spec.true_class_count, size=n)
    x = spec.center_array()[y] + spec.sigma * rng.standard_normal((n, spec.dim))
    return Dataset(x, y, np.zeros(n, dtype=bool))


def mask_labels(dataset: Dataset, rate: float, seed: int = 0) -> Dataset:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"label rate must lie in [0, 1], got {rate}")
    n = len(dataset)
    k = int(round(rate * n))
    flags = np.zeros(n, dtype=bool)
    flags[np.random.default_rng(seed).choice(n, size=k, replace=False)] = True
    return replace(dataset, has_label=flags)


def training_view(dataset: Dataset, idx: np.ndarray) -> LabeledBatch:
    flags = dataset.has_label[idx]
    return LabeledBatch(dataset.x[idx], np.where(flags, dataset.y[idx], -1), flags)


def sample_batch(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> LabeledBatch:
    if batch_size > len(dataset):
        raise ValueError(f"batch size {batch_size} exceeds dataset size {len(dataset)}")
    return training_view(dataset, rng.choice(len(dataset), size=batch_size, replace=False))


def save_dataset(dataset: Dataset, path) -> None:
    """One sample per line: coordinates, true label, has_label flag."""
    cols = [dataset.x, dataset.y[:, None], dataset.has_label[:, None].astype(int)]
    fmt = ["%.17g"] * dataset.x.shape[1] + ["%d", "%d"]
    np.savetxt(path, np.hstack(cols), fmt=fmt)


def load_dataset(path) -> Dataset:
    raw = np.loadtxt(Path(path), ndmin=2)
    return Dataset(raw[:, :-2].copy(), raw[:, -2].astype(np.int64), raw[:, -1].astype(bool))
