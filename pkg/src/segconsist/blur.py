"""Gaussian blur with reflect borders, and a blur-prefixed oracle wrapper."""
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import BadStd
from .tensor import as_image


@dataclass(frozen=True)
class GaussianKernel:
    std: float
    radius: int
    taps: np.ndarray  # 1-D, normalized, length 2*radius + 1

    @property
    def weights(self):
        """Full 2-D kernel, the outer product of the separable taps."""
        return np.outer(self.taps, self.taps)

    @property
    def size(self):
        return 2 * self.radius + 1


def gaussian_kernel(std):
    if not std > 0:
        raise BadStd(f"std must be > 0, got {std}")
    radius = int(math.ceil(3.0 * std))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (t / std) ** 2)
    taps /= taps.sum()
    return GaussianKernel(float(std), radius, taps)


def reflect_index(i, n):
    """numpy ``mode="reflect"`` source index for a (possibly out-of-range) position."""
    if n == 1:
        return np.zeros_like(i)
    period = 2 * n - 2
    j = np.mod(i, period)
    return np.where(j >= n, period - j, j)


@lru_cache(maxsize=64)
def _axis_operator(std, n):
    k = gaussian_kernel(std)
    op = np.zeros((n, n))
    rows = np.arange(n)
    for t, w in zip(range(-k.radius, k.radius + 1), k.taps):
        np.add.at(op, (rows, reflect_index(rows + t, n)), w)
    op.setflags(write=False)
    return op


def blur_operators(std, h, w):
    """Row and column operators ``(Bh, Bw)`` with ``blur(x) = Bh @ x @ Bw.T`` per channel."""
    return _axis_operator(float(std), h), _axis_operator(float(std), w)


def blur(img, k):
    """Per-channel separable Gaussian blur with reflect border handling."""
    if not isinstance(k, GaussianKernel):
        k = gaussian_kernel(k)
    img = as_image(img)
    bh, bw = blur_operators(k.std, img.shape[0], img.shape[1])
    return np.einsum("ia,abc,jb->ijc", bh, img, bw, optimize=True)


def blur_adjoint(g, k):
    """Transpose of :func:`blur`, used to pull gradients back through the blur."""
    if not isinstance(k, GaussianKernel):
        k = gaussian_kernel(k)
    bh, bw = blur_operators(k.std, g.shape[0], g.shape[1])
    return np.einsum("ai,abc,bj->ijc", bh, g, bw, optimize=True)


class BlurPrefixed:
    """Oracle computing ``model(blur(x))``; gradients chain through the blur."""

    def __init__(self, model, std):
        self.kernel = gaussian_kernel(std)
        self.model = model
        self.n_classes = model.n_classes

    @property
    def std(self):
        return self.kernel.std

    def predict_scores(self, img):
        return self.model.predict_scores(blur(img, self.kernel))

    def predict_labels(self, img):
        return np.argmax(self.predict_scores(img), axis=-1)

    def logits(self, img):
        return self.model.logits(blur(img, self.kernel))

    def input_gradient(self, img, objective):
        value, g = self.model.input_gradient(blur(img, self.kernel), objective)
        return value, blur_adjoint(g, self.kernel)


def blur_prefixed(model, std):
    return BlurPrefixed(model, std)
