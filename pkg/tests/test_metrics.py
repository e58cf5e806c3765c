import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from segconsist.errors import EmptyInput, EmptyMask, EmptyOverlap, NothingLeft, PatchTooLarge, ShapeMismatch
from segconsist.metrics import (calibrate_threshold, confusion_counts, entropy, miou, miou_of_labelmaps,
                                normalized_target_miou, parse_calibration, per_class_iou, pixel_success_rate,
                                roc_auc, self_entropy_map)


def set_miou(a, b):
    """Independent reference: IoU of pixel-coordinate sets per class."""
    ious = []
    for c in set(a.ravel()) | set(b.ravel()):
        pa = {tuple(p) for p in np.argwhere(a == c)}
        pb = {tuple(p) for p in np.argwhere(b == c)}
        ious.append(len(pa & pb) / len(pa | pb))
    return sum(ious) / len(ious)


def pairwise_auc(b, a):
    wins = sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in b for y in a)
    return wins / (len(b) * len(a))


def test_miou_hand_value():
    # class 0: 1/2, class 1: 2/3 -> 7/12
    a = np.array([[0, 0], [1, 1]])
    b = np.array([[0, 1], [1, 1]])
    assert miou_of_labelmaps(a, b) == pytest.approx(7 / 12, abs=1e-15)


def test_miou_skips_absent_classes():
    a = np.array([[0, 0], [4, 4]])
    assert miou_of_labelmaps(a, a, n_classes=5) == 1.0
    iou = per_class_iou(confusion_counts(a, a, 5))
    assert np.isnan(iou[1]) and iou[4] == 1.0


def test_miou_errors():
    with pytest.raises(EmptyOverlap):
        miou(np.zeros((3, 3)))
    with pytest.raises(ShapeMismatch):
        miou_of_labelmaps(np.zeros((2, 2), int), np.zeros((2, 3), int))


labelmaps = st.integers(1, 6).flatmap(lambda h: st.integers(1, 6).flatmap(
    lambda w: st.tuples(arrays(np.int64, (h, w), elements=st.integers(0, 4)),
                        arrays(np.int64, (h, w), elements=st.integers(0, 4)))))


@given(labelmaps)
def test_miou_matches_set_reference(pair):
    a, b = pair
    assert miou_of_labelmaps(a, b, 5) == pytest.approx(set_miou(a, b), abs=1e-12)


@given(labelmaps)
def test_miou_symmetric_and_bounded(pair):
    a, b = pair
    m = miou_of_labelmaps(a, b, 5)
    assert 0.0 <= m <= 1.0
    assert m == pytest.approx(miou_of_labelmaps(b, a, 5), abs=1e-15)
    assert miou_of_labelmaps(a, a, 5) == 1.0


def test_entropy_values():
    assert entropy([1.0, 0.0, 0.0]) == 0.0
    assert entropy([0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)
    assert entropy(np.full(5, 0.2)) == pytest.approx(math.log(5), abs=1e-12)


@given(arrays(np.float64, 5, elements=st.floats(0, 1)))
def test_entropy_bounds(v):
    if v.sum() == 0:
        return
    h = float(entropy(v / v.sum()))
    assert -1e-15 <= h <= math.log(5) + 1e-12


def test_roc_auc_hand_values():
    assert roc_auc([1.0, 1.0], [0.0]).auc == 1.0
    assert roc_auc([0.0], [1.0]).auc == 0.0
    assert roc_auc([0.5], [0.5]).auc == 0.5
    # DERIVED: pairs (0.9>0.2, 0.9>0.6, 0.4>0.2, 0.4<0.6) -> 3/4
    assert roc_auc([0.9, 0.4], [0.2, 0.6]).auc == pytest.approx(0.75, abs=1e-15)
    with pytest.raises(EmptyInput):
        roc_auc([], [0.1])


@given(st.lists(st.integers(0, 6), min_size=1, max_size=15), st.lists(st.integers(0, 6), min_size=1, max_size=15))
def test_roc_auc_matches_pairwise(b, a):
    b = np.array(b) / 6.0
    a = np.array(a) / 6.0
    r = roc_auc(b, a)
    assert r.auc == pytest.approx(pairwise_auc(b, a), abs=1e-12)
    assert r.fpr[0] == 0 and r.tpr[-1] == 1.0 and r.fpr[-1] == 1.0
    assert np.all(np.diff(r.fpr) >= 0) and np.all(np.diff(r.tpr) >= 0)


def test_calibration_modes():
    s = [0.9, 0.5, 0.7, 0.8]
    assert calibrate_threshold(s, "min") == 0.5
    # quantile:0.25 keeps at least 3 of 4 strictly above -> threshold 0.5
    assert calibrate_threshold(s, "quantile:0.25") == 0.5
    # quantile:0 keeps all 4 above: just below the minimum
    t = calibrate_threshold(s, "quantile:0")
    assert t < 0.5 and np.nextafter(t, 1) == 0.5
    assert parse_calibration("quantile:0.1") == ("quantile", 0.1)
    for bad in ("max", "quantile:1.5", "quantile:x"):
        with pytest.raises(ValueError):
            parse_calibration(bad)
    with pytest.raises(EmptyInput):
        calibrate_threshold([], "min")


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 0.99))
def test_quantile_threshold_keeps_fraction(scores, q):
    t = calibrate_threshold(scores, f"quantile:{q}")
    above = np.mean(np.array(scores) > t)
    assert above >= 1 - q - 1e-9


def test_pixel_success_rate():
    pred = np.array([[0, 1], [2, 2]])
    tgt = np.array([[0, 0], [2, 1]])
    assert pixel_success_rate(pred, tgt) == 0.5
    assert pixel_success_rate(pred, tgt, np.array([[True, False], [True, False]])) == 1.0
    with pytest.raises(EmptyMask):
        pixel_success_rate(pred, tgt, np.zeros((2, 2), bool))


def test_normalized_target_miou():
    gt = np.array([[0, 0, 1, 1]])
    tgt = np.array([[0, 2, 3, 1]])  # only columns 1 and 2 differ from gt
    pred = np.array([[4, 2, 0, 4]])
    # kept pixels: pred (2, 0) vs target (2, 3) -> IoU class 2 = 1, class 3 = 0, class 0 = 0
    assert normalized_target_miou(pred, tgt, gt, 0, 5) == pytest.approx(1 / 3)
    assert normalized_target_miou(pred, tgt, gt, 2, 5) == 1.0
    with pytest.raises(NothingLeft):
        normalized_target_miou(pred, tgt, gt, 3, 5)
    with pytest.raises(NothingLeft):
        normalized_target_miou(pred, gt, gt, 0, 5)


def test_self_entropy_constant_model_is_zero(constant_model):
    img = np.random.default_rng(0).random((12, 12, 3))
    h = self_entropy_map(img, constant_model, K=4, s=5, seed=0)
    assert h.shape == (12, 12) and np.all(h == 0.0)
    with pytest.raises(PatchTooLarge):
        self_entropy_map(img, constant_model, 4, 13, 0)


class LeftHalfModel:
    """Class depends on the column *within the patch*: an inconsistent oracle."""

    n_classes = 2

    def predict_labels(self, img):
        w = img.shape[1]
        return np.broadcast_to((np.arange(w) >= w // 2).astype(np.int64), img.shape[:2]).copy()


def test_self_entropy_bounds_and_determinism():
    img = np.zeros((10, 10, 3))
    h1 = self_entropy_map(img, LeftHalfModel(), K=8, s=4, seed=5)
    h2 = self_entropy_map(img, LeftHalfModel(), K=8, s=4, seed=5)
    np.testing.assert_array_equal(h1, h2)
    assert h1.max() > 0 and h1.min() >= 0 and h1.max() <= math.log(2) + 1e-12
