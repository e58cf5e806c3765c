"""Adversarial target label maps."""
import numpy as np

from .attacks import AdvTarget
from .errors import BadOffset

TARGET_KINDS = ("pure", "remap", "overlay", "strip")


def _in_triangle(py, px, a, b, c):
    def side(p1, p2):
        return (px - p2[1]) * (p1[0] - p2[0]) - (p1[1] - p2[1]) * (py - p2[0])
    d1, d2, d3 = side(a, b), side(b, c), side(c, a)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def kitty_mask(h, w):
    """Boolean cat-head silhouette (round face, two pointed ears) centred in an ``h x w`` raster."""
    py, px = np.mgrid[:h, :w].astype(np.float64) + 0.5
    cy, cx = 0.58 * h, 0.5 * w
    ry, rx = 0.28 * h, 0.33 * w
    mask = ((py - cy) / ry) ** 2 + ((px - cx) / rx) ** 2 <= 1.0
    base = cy - 0.55 * ry
    for side in (-1, 1):
        mask |= _in_triangle(py, px, (base, cx + side * 0.2 * rx), (base, cx + side * 0.95 * rx),
                             (cy - 1.5 * ry, cx + side * 0.75 * rx))
    return mask


def strip_labels(h, w, n_classes):
    """Horizontal bands of (near) equal height cycling through every class."""
    band = np.minimum((np.arange(h) * n_classes) // h, n_classes - 1)
    return np.repeat(band[:, None], w, axis=1).astype(np.int64)


def make_target(kind, ground_truth, n_classes, cls=1, offset=1, template=None):
    """Build an :class:`AdvTarget` from a ground-truth label map.

    * ``pure``: every pixel set to ``cls``
    * ``remap``: ``(label + offset) mod n_classes``, so no pixel keeps its true label
    * ``overlay``: ground truth with ``template`` (default: cat-head mask) painted as ``cls``
    * ``strip``: equal horizontal bands labelled ``0 .. n_classes - 1``
    """
    gt = np.asarray(ground_truth, dtype=np.int64)
    h, w = gt.shape
    if kind == "pure":
        labels = np.full_like(gt, cls)
    elif kind == "remap":
        if offset % n_classes == 0:
            raise BadOffset(f"offset {offset} is a multiple of {n_classes}")
        labels = (gt + offset) % n_classes
    elif kind == "overlay":
        mask = kitty_mask(h, w) if template is None else np.asarray(template, dtype=bool)
        labels = gt.copy()
        labels[mask] = cls
    elif kind == "strip":
        labels = strip_labels(h, w, n_classes)
    else:
        raise ValueError(f"unknown target kind {kind!r}; expected one of {TARGET_KINDS}")
    return AdvTarget(labels)
