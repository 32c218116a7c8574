"""Fréchet distance, label-purity curves, assignment accuracy and mode coverage."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

_EIG_CLAMP = 1e-10


@dataclass
class GaussianSummary:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean of length {d}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12, rtol=0):
            raise ValueError("covariance must be symmetric")


@dataclass
class ThresholdCurve:
    thresholds: np.ndarray
    values: np.ndarray  # NaN marks an empty selection
    counts: np.ndarray
    group_sizes: list[dict[int, int]]


def summarize(samples: np.ndarray) -> GaussianSummary:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError(f"need at least 2 samples of shape (n, dim), got {samples.shape}")
    cov = np.cov(samples, rowvar=False, ddof=1).reshape(samples.shape[1], samples.shape[1])
    return GaussianSummary(samples.mean(axis=0), (cov + cov.T) / 2)


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    if w.min() < -_EIG_CLAMP * max(1.0, abs(w).max()):
        raise ValueError(f"matrix is not positive semi-definite (eigenvalue {w.min():.3g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: GaussianSummary, b: GaussianSummary) -> float:
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"dimension mismatch: {a.mean.shape[0]} vs {b.mean.shape[0]}")
    sa = _psd_sqrt(a.cov)
    _psd_sqrt(b.cov)  # validates b
    inner = sa @ b.cov @ sa
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_sqrt = np.sqrt(np.clip(w, 0.0, None)).sum()
    diff = a.mean - b.mean
    return float(max(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sqrt, 0.0))


def _check_aligned(*arrays) -> None:
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"arrays must be aligned, got lengths {sorted(lengths)}")


def dominant_class_ratio_curve(true_labels, artificial_labels, reliabilities, thresholds) -> ThresholdCurve:
    """Unweighted mean, over nonempty artificial-label groups, of each group's majority share."""
    true_labels = np.asarray(true_labels)
    artificial_labels = np.asarray(artificial_labels)
    reliabilities = np.asarray(reliabilities, dtype=np.float64)
    _check_aligned(true_labels, artificial_labels, reliabilities)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) <= 0) or thresholds.min() < 0 or thresholds.max() > 1:
        raise ValueError("thresholds must be strictly increasing within [0, 1]")
    values, counts, sizes = [], [], []
    for th in thresholds:
        sel = reliabilities >= th
        counts.append(int(sel.sum()))
        groups = {}
        ratios = []
        for g in np.unique(artificial_labels[sel]):
            members = true_labels[sel & (artificial_labels == g)]
            groups[int(g)] = len(members)
            ratios.append(np.bincount(members).max() / len(members))
        sizes.append(groups)
        values.append(np.mean(ratios) if ratios else np.nan)
    return ThresholdCurve(thresholds, np.asarray(values), np.asarray(counts), sizes)


def class_distribution_vs_threshold(true_labels, artificial_labels, reliabilities, thresholds,
                                    label: int, n_classes: int) -> np.ndarray:
    """Rows: thresholds; columns: share of each true class among selected samples carrying ``label``.

    A threshold that selects nothing yields a NaN row.
    """
    true_labels = np.asarray(true_labels, dtype=np.int64)
    artificial_labels = np.asarray(artificial_labels)
    reliabilities = np.asarray(reliabilities, dtype=np.float64)
    _check_aligned(true_labels, artificial_labels, reliabilities)
    keep = artificial_labels == label
    true_labels, reliabilities = true_labels[keep], reliabilities[keep]
    rows = []
    for th in np.asarray(thresholds, dtype=np.float64):
        hist = np.bincount(true_labels[reliabilities >= th], minlength=n_classes).astype(np.float64)
        rows.append(hist / hist.sum() if hist.sum() else np.full(n_classes, np.nan))
    return np.asarray(rows)


def contingency(artificial_labels, true_labels, K: int, n_true: int) -> np.ndarray:
    m = np.zeros((K, n_true), dtype=np.int64)
    np.add.at(m, (np.asarray(artificial_labels), np.asarray(true_labels)), 1)
    return m


def _best_matching_exhaustive(m: np.ndarray) -> int:
    K, C = m.shape
    if K <= C:
        return max(sum(m[i, p[i]] for i in range(K)) for p in itertools.permutations(range(C), K))
    return max(sum(m[p[j], j] for j in range(C)) for p in itertools.permutations(range(K), C))


def alignment_accuracy(artificial_labels, true_labels, K: int, true_class_count: int) -> float:
    """Accuracy under the best one-to-one map from artificial labels to true classes."""
    _check_aligned(artificial_labels, true_labels)
    n = len(true_labels)
    if n == 0:
        return float("nan")
    m = contingency(artificial_labels, true_labels, K, true_class_count)
    if max(K, true_class_count) <= 8:
        best = _best_matching_exhaustive(m)
    else:
        rows, cols = linear_sum_assignment(m, maximize=True)
        best = m[rows, cols].sum()
    return float(best) / n


def mode_coverage(fakes: np.ndarray, centers: np.ndarray, radius: float) -> int:
    if radius <= 0:
        raise ValueError("radius must be positive")
    fakes = np.asarray(fakes, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    d2 = ((fakes[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    return int((d2.min(axis=0) <= radius * radius).sum())
