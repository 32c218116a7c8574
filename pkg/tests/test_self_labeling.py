import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unigan.autodiff import Parameter, ShapeError
from unigan.nets import init_teacher, teacher_forward
from unigan.self_labeling import (
    AugmentConfig,
    argmax_labels,
    ema_update,
    label_batch,
    label_reliability,
    reliability,
    self_attention_mask,
    self_label,
    strong_augment,
    weak_augment,
)

NO_AUG = AugmentConfig(0.0, 0.0, 0.0)


def _pair(ema_value, live_value):
    ema = {"w": Parameter("w", np.array([ema_value]), trainable=False)}
    live = {"w": Parameter("w", np.array([live_value]))}
    return ema, live


@pytest.mark.parametrize("decay, want", [(0.999, 0.001), (1.0, 0.0), (0.0, 1.0)])
def test_ema_examples(decay, want):
    ema, live = _pair(0.0, 1.0)
    ema_update(ema, live, decay)
    assert ema["w"].data[0] == pytest.approx(want, abs=1e-15)


def test_ema_geometric_convergence():
    ema, live = _pair(0.0, 1.0)
    for step in range(1, 51):
        ema_update(ema, live, 0.9)
        assert 1.0 - ema["w"].data[0] == pytest.approx(0.9**step, rel=1e-9)


def test_ema_rejects_mismatch():
    ema = {"w": Parameter("w", np.zeros(2))}
    with pytest.raises(ShapeError):
        ema_update(ema, {"w": Parameter("w", np.zeros(3))}, 0.5)
    with pytest.raises(ShapeError):
        ema_update(ema, {"v": Parameter("v", np.zeros(2))}, 0.5)
    with pytest.raises(ValueError):
        ema_update(ema, {"w": Parameter("w", np.zeros(2))}, 1.5)


def test_argmax_examples():
    assert argmax_labels(np.array([[0.1, 0.9, 0.3]]))[0] == 1
    assert argmax_labels(np.array([[0.5, 0.5, 0.0]]))[0] == 0


def test_self_label_matches_brute_force_scan():
    rng = np.random.default_rng(0)
    teacher = init_teacher(rng, n_classes=10)
    x = rng.normal(0, 3, size=(200, 2))
    labels = self_label(x, teacher, NO_AUG, rng)
    logits = teacher_forward(x, teacher, use_ema=True).data
    for row, lab in zip(logits, labels):
        best = 0
        for i in range(len(row)):
            if row[i] > row[best]:
                best = i
        assert lab == best


def test_reliability_examples():
    assert label_reliability(np.zeros((1, 10)), np.array([3]))[0] == pytest.approx(0.1, abs=1e-15)
    assert label_reliability(np.array([[math.log(2), 0.0]]), np.array([0]))[0] == pytest.approx(2 / 3, abs=1e-15)


def test_reliability_shares_the_labeling_draw():
    rng = np.random.default_rng(1)
    teacher = init_teacher(rng, n_classes=5)
    x = rng.normal(size=(30, 2))
    aug = AugmentConfig(0.3, 0.0, 0.0)
    labels = self_label(x, teacher, aug, np.random.default_rng(7))
    rel = reliability(x, labels, teacher, aug, np.random.default_rng(7))
    res = label_batch(x, teacher, aug, 0.5, np.random.default_rng(7))
    assert np.array_equal(res.labels, labels)
    assert np.array_equal(res.reliabilities, rel)
    assert np.all(rel >= 1 / 5) and np.all(rel <= 1)
    assert np.array_equal(res.mask, self_attention_mask(res.reliabilities, 0.5))


def test_mask_examples():
    assert self_attention_mask(np.array([0.96, 0.50, 0.95]), 0.95).tolist() == [1, 0, 1]
    assert self_attention_mask(np.array([0.1, 0.3]), 0.0).tolist() == [1, 1]
    assert self_attention_mask(np.array([1.0, 0.999]), 1.0).tolist() == [1, 0]
    with pytest.raises(ValueError):
        self_attention_mask(np.array([0.5]), 1.01)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1), st.floats(0, 1))
def test_selection_is_monotone(rel, a, b):
    lo, hi = sorted((a, b))
    rel = np.array(rel)
    assert np.all(self_attention_mask(rel, hi) <= self_attention_mask(rel, lo))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(-20, 20), min_size=4, max_size=4), min_size=1, max_size=8))
def test_reliability_is_softmax_row_maximum(rows):
    logits = np.array(rows)
    labels = argmax_labels(logits)
    rel = label_reliability(logits, labels)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    assert np.allclose(rel, probs.max(axis=1), atol=1e-15)
    assert np.all(rel >= 0.25 - 1e-15)


def test_augment_identity_and_determinism():
    x = np.random.default_rng(0).normal(size=(10, 2))
    assert np.array_equal(weak_augment(x, NO_AUG, np.random.default_rng(0)), x)
    assert np.array_equal(strong_augment(x, NO_AUG, np.random.default_rng(0)), x)
    aug = AugmentConfig(0.1, 0.5, 0.3)
    assert np.array_equal(strong_augment(x, aug, np.random.default_rng(3)), strong_augment(x, aug, np.random.default_rng(3)))
    assert np.array_equal(weak_augment(x, aug, np.random.default_rng(3)), weak_augment(x, aug, np.random.default_rng(3)))


def test_strong_dropout_zeroes_coordinates():
    x = np.ones((2000, 2))
    out = strong_augment(x, AugmentConfig(0.0, 0.0, 0.25), np.random.default_rng(0))
    assert set(np.unique(out)) == {0.0, 1.0}
    assert abs((out == 0).mean() - 0.25) < 0.02


@pytest.mark.parametrize("kwargs", [{"strong_dropout": 1.0}, {"weak_sigma": -0.1}, {"strong_sigma": -1.0}])
def test_augment_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        AugmentConfig(**kwargs)
