"""Spatial- and scale-consistency detection scores, thresholds and evaluation."""
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .blur import blur, gaussian_kernel
from .errors import EmptyInput
from .geometry import OverlapBounds, draw_patch_size, overlap_in_local_coords, sample_overlapping_pair
from .metrics import calibrate_threshold, miou_of_labelmaps, predict_labels, roc_auc
from .seeding import as_generator
from .tensor import as_image, crop

BENIGN = "benign"
ADVERSARIAL = "adversarial"


@dataclass
class SpatialDetectorConfig:
    K: int = 5
    patch_size: Union[int, tuple] = 64  # int, or inclusive (lo, hi) drawn per pair
    bounds: tuple = (8, 16)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        self.bounds = OverlapBounds(*self.bounds)
        smallest = self.patch_size if isinstance(self.patch_size, int) else min(self.patch_size)
        self.bounds.check(smallest)


def spatial_consistency_score(img, model, cfg, rng):
    """Mean mIoU between the predictions two overlapping patches make on their shared region.

    ``K`` independent patch pairs are drawn from ``rng``; each patch is
    segmented on its own, so the shared pixels see different surroundings.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    rng = as_generator(rng)
    scores = []
    for _ in range(cfg.K):
        s = draw_patch_size(cfg.patch_size, rng)
        r1, r2 = sample_overlapping_pair(s, w, h, cfg.bounds, rng)
        o1, o2 = overlap_in_local_coords(r1, r2, s)
        pred1 = predict_labels(model, crop(img, r1))
        pred2 = predict_labels(model, crop(img, r2))
        scores.append(miou_of_labelmaps(crop(pred1, o1), crop(pred2, o2), model.n_classes))
    return float(np.mean(scores))


def scale_consistency_score(img, model, std):
    """mIoU between predictions on ``img`` and on its Gaussian-blurred copy."""
    k = gaussian_kernel(std)
    img = as_image(img)
    return miou_of_labelmaps(predict_labels(model, img), predict_labels(model, blur(img, k)),
                             model.n_classes)


def min_scale_consistency_score(img, model, stds):
    """Combined mode: the least consistent of several blur levels."""
    return min(scale_consistency_score(img, model, s) for s in stds)


def classify(score, threshold):
    """Benign iff the score is strictly above the threshold."""
    return BENIGN if score > threshold else ADVERSARIAL


@dataclass
class DetectionReport:
    benign_scores: np.ndarray
    adversarial_scores: np.ndarray
    threshold: float
    auc: float
    detection_rate: float
    false_positive_rate: float
    calibration: str = "min"
    roc: object = field(default=None, repr=False)

    @property
    def verdicts(self):
        return ([classify(s, self.threshold) for s in self.benign_scores],
                [classify(s, self.threshold) for s in self.adversarial_scores])

    def summary(self):
        return {"auc": self.auc, "threshold": self.threshold, "detection_rate": self.detection_rate,
                "false_positive_rate": self.false_positive_rate, "calibration": self.calibration,
                "n_benign": int(len(self.benign_scores)),
                "n_adversarial": int(len(self.adversarial_scores))}


def report_from_scores(benign_scores, adv_scores, calibration_scores, calibration="min"):
    b = np.asarray(benign_scores, dtype=np.float64)
    a = np.asarray(adv_scores, dtype=np.float64)
    if b.size == 0 or a.size == 0 or len(calibration_scores) == 0:
        raise EmptyInput("benign, adversarial and calibration scores must be non-empty")
    thr = calibrate_threshold(calibration_scores, calibration)
    roc = roc_auc(b, a)
    return DetectionReport(b, a, thr, roc.auc,
                           detection_rate=float(np.mean(a <= thr)),
                           false_positive_rate=float(np.mean(b <= thr)),
                           calibration=str(calibration), roc=roc)


def evaluate_detector(benign, adversarial, scorer: Callable, calibration="min",
                      calibration_images: Sequence = None):
    """Score benign and adversarial images, calibrate, and summarize.

    ``scorer(img, index)`` returns a consistency score; ``index`` lets callers
    key per-image rng streams.  The threshold comes from ``calibration_images``
    (a benign split disjoint from ``benign``) when given.
    """
    if len(benign) == 0 or len(adversarial) == 0:
        raise EmptyInput("need benign and adversarial images")
    b = [scorer(x, i) for i, x in enumerate(benign)]
    a = [scorer(x, i) for i, x in enumerate(adversarial)]
    if calibration_images is None:
        cal = b
    else:
        offset = len(benign) + len(adversarial)
        cal = [scorer(x, offset + i) for i, x in enumerate(calibration_images)]
    return report_from_scores(b, a, cal, calibration)
