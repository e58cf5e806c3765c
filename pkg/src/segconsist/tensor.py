"""Raster conventions and elementary operations.

Plain numpy arrays carry the data:

* image / perturbation: ``(H, W, C)`` float64, images in ``[0, 1]``
* score map: ``(H, W, n_classes)`` float64
* label map: ``(H, W)`` integer class ids

Rectangles are half-open ``[u1, u3) x [u2, u4)`` in (row, col) order.
"""
from typing import NamedTuple

import numpy as np

from .errors import OutOfBounds, ShapeMismatch


class PatchRect(NamedTuple):
    u1: int  # top row
    u2: int  # left col
    u3: int  # bottom row, exclusive
    u4: int  # right col, exclusive

    @property
    def height(self):
        return self.u3 - self.u1

    @property
    def width(self):
        return self.u4 - self.u2

    def translate(self, dr, dc):
        return PatchRect(self.u1 + dr, self.u2 + dc, self.u3 + dr, self.u4 + dc)


def as_image(x, channels=None):
    """Validate and convert to a float64 ``(H, W, C)`` image."""
    img = np.asarray(x, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeMismatch(f"image must be (H, W, C), got shape {img.shape}")
    if channels is not None and img.shape[2] != channels:
        raise ShapeMismatch(f"expected {channels} channels, got {img.shape[2]}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def apply_perturbation(img, r):
    """Adversarial image ``clamp(img + r, 0, 1)``; ``r`` itself is never clamped."""
    if np.shape(img) != np.shape(r):
        raise ShapeMismatch(f"perturbation shape {np.shape(r)} != image shape {np.shape(img)}")
    return np.clip(img + r, 0.0, 1.0)


def argmax_labels(scores):
    """Per-pixel argmax over the class axis; ties go to the lowest class index."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ValueError("empty score map")
    # np.argmax returns the first maximal index, which is the tie rule we want
    return np.argmax(scores, axis=-1)


def crop(x, rect):
    """Return ``x[u1:u3, u2:u4]`` (copy) for any raster with leading (H, W) axes."""
    u1, u2, u3, u4 = rect
    H, W = np.shape(x)[:2]
    if not (0 <= u1 < u3 <= H and 0 <= u2 < u4 <= W):
        raise OutOfBounds(f"rect {tuple(rect)} outside raster of size {H}x{W}")
    return np.array(x[u1:u3, u2:u4], copy=True)


def global_l2(r):
    """Root-mean-square of all entries: sqrt(sum(r**2) / (w*h*c))."""
    r = np.asarray(r, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty perturbation")
    return float(np.sqrt(np.mean(r * r)))


def linf(r):
    r = np.asarray(r, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty perturbation")
    return float(np.max(np.abs(r)))
