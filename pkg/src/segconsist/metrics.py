"""Agreement, entropy, attack-success and ROC metrics."""
import math
from typing import NamedTuple

import numpy as np

from .errors import (EmptyInput, EmptyMask, EmptyOverlap, NothingLeft, PatchTooLarge,
                     ShapeMismatch)
from .geometry import valid_top_left_range
from .seeding import substream
from .tensor import as_image


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ShapeMismatch(f"shapes differ: {np.shape(a)} vs {np.shape(b)}")


def confusion_counts(o1, o2, n_classes=None):
    """``counts[i, j]`` = number of pixels labelled ``i`` in ``o1`` and ``j`` in ``o2``."""
    o1 = np.asarray(o1)
    o2 = np.asarray(o2)
    _same_shape(o1, o2)
    if n_classes is None:
        n_classes = int(max(o1.max(initial=0), o2.max(initial=0))) + 1
    idx = o1.ravel().astype(np.int64) * n_classes + o2.ravel()
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def per_class_iou(cc):
    """IoU per class; NaN where the class appears in neither map."""
    cc = np.asarray(cc, dtype=np.float64)
    inter = np.diag(cc)
    union = cc.sum(axis=1) + cc.sum(axis=0) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / np.where(union > 0, union, 1), np.nan)


def miou(cc):
    """Mean IoU over the classes present in either map.

    Classes absent from both maps have a zero denominator; they are skipped
    and do not count toward the number of classes.
    """
    cc = np.asarray(cc)
    if cc.sum() == 0:
        raise EmptyOverlap("confusion matrix is empty")
    iou = per_class_iou(cc)
    return float(np.mean(iou[~np.isnan(iou)]))


def miou_of_labelmaps(o1, o2, n_classes=None):
    return miou(confusion_counts(o1, o2, n_classes))


def entropy(v):
    """Natural-log entropy of a distribution along the last axis, with 0 ln 0 = 0."""
    v = np.asarray(v, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)
    return np.maximum(-terms.sum(axis=-1), 0.0)


def predict_labels(model, img):
    if hasattr(model, "predict_labels"):
        return model.predict_labels(img)
    return np.argmax(model.predict_scores(img), axis=-1)


def self_entropy_map(img, model, K, s, seed):
    """Per-pixel entropy of the argmax label across ``K`` random patches containing it.

    Pixel ``(r, c)`` draws its patches from ``substream(seed, r * W + c)``.
    Each distinct patch position is segmented once and reused.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    img = as_image(img)
    H, W = img.shape[:2]
    if s > H or s > W:
        raise PatchTooLarge(f"patch {s} exceeds image {H}x{W}")
    n_classes = model.n_classes

    tops = np.empty((H, W, K), dtype=np.int64)
    lefts = np.empty((H, W, K), dtype=np.int64)
    for r in range(H):
        r_lo, r_hi = valid_top_left_range(r, s, H)
        for c in range(W):
            c_lo, c_hi = valid_top_left_range(c, s, W)
            g = substream(seed, r * W + c)
            tops[r, c] = g.integers(r_lo, r_hi + 1, size=K)
            lefts[r, c] = g.integers(c_lo, c_hi + 1, size=K)

    counts = np.zeros((H, W, n_classes))
    rows = np.broadcast_to(np.arange(H)[:, None, None], tops.shape)
    cols = np.broadcast_to(np.arange(W)[None, :, None], tops.shape)
    key = tops * W + lefts
    order = np.argsort(key, axis=None, kind="stable")
    flat_key = key.ravel()[order]
    starts = np.flatnonzero(np.r_[True, flat_key[1:] != flat_key[:-1]])
    ends = np.r_[starts[1:], flat_key.size]
    fr, fc = rows.ravel()[order], cols.ravel()[order]
    for a, b in zip(starts, ends):
        t, l = divmod(int(flat_key[a]), W)
        labels = predict_labels(model, img[t:t + s, l:l + s])
        pr, pc = fr[a:b], fc[a:b]
        np.add.at(counts, (pr, pc, labels[pr - t, pc - l]), 1.0)
    return entropy(counts / K)


def pixel_success_rate(pred, target, mask=None):
    """Fraction of (masked) pixels where ``pred == target``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    _same_shape(pred, target)
    hit = pred == target
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        _same_shape(mask, pred)
        hit = hit[mask]
    if hit.size == 0:
        raise EmptyMask("no pixels selected")
    return float(np.mean(hit))


def normalized_target_miou(pred, target, ground_truth, k_exclude=0, n_classes=None,
                           drop_matching_gt=True):
    """mIoU between a prediction and an adversarial target, normalized for transfer studies.

    Pixels where the target already equals the ground truth are removed, then the
    ``k_exclude`` classes with the lowest IoU are discarded before averaging.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    ground_truth = np.asarray(ground_truth)
    _same_shape(pred, target)
    _same_shape(pred, ground_truth)
    if n_classes is None:
        n_classes = int(max(pred.max(), target.max(), ground_truth.max())) + 1
    if k_exclude < 0 or k_exclude >= n_classes:
        raise ValueError(f"k_exclude must be in [0, {n_classes})")
    keep = target != ground_truth if drop_matching_gt else np.ones(pred.shape, dtype=bool)
    if not keep.any():
        raise NothingLeft("target equals ground truth on every pixel")
    iou = per_class_iou(confusion_counts(pred[keep], target[keep], n_classes))
    iou = np.sort(iou[~np.isnan(iou)])
    if iou.size <= k_exclude:
        raise NothingLeft(f"only {iou.size} classes present, cannot drop {k_exclude}")
    return float(np.mean(iou[k_exclude:]))


class RocResult(NamedTuple):
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_auc(benign_scores, adv_scores):
    """ROC of the rule "flag as adversarial when score <= t", swept over all t.

    Higher scores mean more benign-looking.  The trapezoidal area equals
    ``P(b > a) + P(b == a) / 2`` over benign/adversarial pairs.
    """
    b = np.asarray(benign_scores, dtype=np.float64).ravel()
    a = np.asarray(adv_scores, dtype=np.float64).ravel()
    if b.size == 0 or a.size == 0:
        raise EmptyInput("need at least one benign and one adversarial score")
    values = np.unique(np.concatenate([a, b]))
    tpr = np.searchsorted(np.sort(a), values, side="right") / a.size
    fpr = np.searchsorted(np.sort(b), values, side="right") / b.size
    tpr = np.r_[0.0, tpr]
    fpr = np.r_[0.0, fpr]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocResult(fpr, tpr, auc)


def parse_calibration(mode):
    """Accept ``"min"``, ``"quantile:<q>"`` or an already parsed tuple."""
    if isinstance(mode, tuple):
        return mode
    if mode == "min":
        return ("min", None)
    if isinstance(mode, str) and mode.startswith("quantile:"):
        q = float(mode.split(":", 1)[1])
        if not 0.0 <= q < 1.0:
            raise ValueError("quantile must lie in [0, 1)")
        return ("quantile", q)
    raise ValueError(f"unknown calibration mode {mode!r}")


def calibrate_threshold(benign_scores, mode="min"):
    """Detection threshold from benign scores.

    ``min``: the smallest benign score.  ``quantile:q``: the largest threshold
    that still leaves at least ``(1 - q)`` of the benign scores strictly above it.
    """
    s = np.sort(np.asarray(benign_scores, dtype=np.float64).ravel())
    if s.size == 0:
        raise EmptyInput("no benign scores")
    kind, q = parse_calibration(mode)
    if kind == "min":
        return float(s[0])
    need = max(1, math.ceil((1.0 - q) * s.size - 1e-9))
    cut = s[s.size - need]  # need-th largest; threshold must stay below it
    below = s[s < cut]
    if below.size:
        return float(below[-1])
    return float(np.nextafter(cut, -np.inf))
