"""Random patch sampling and overlap arithmetic for the consistency checks."""
from typing import NamedTuple

import numpy as np

from .errors import ImageTooSmall, NoOverlap, PatchTooLarge, PreconditionError
from .seeding import as_generator
from .tensor import PatchRect


class OverlapBounds(NamedTuple):
    """Open interval ``(b_low, b_upper)`` for the displacement between paired patches."""

    b_low: int
    b_upper: int

    def check(self, s):
        if not (0 < self.b_low < self.b_upper < s):
            raise PreconditionError(f"need 0 < b_low < b_upper < s, got {tuple(self)} with s={s}")
        if self.b_upper - self.b_low < 2:
            raise PreconditionError(f"open range ({self.b_low}, {self.b_upper}) holds no integer")


def sample_overlapping_pair(s, w, h, bounds, rng):
    """Draw two overlapping ``s x s`` patches of a ``h x w`` raster.

    The first top-left corner is ``(I2, I1)`` with ``0 < I1 < w - s - b_upper``
    and ``0 < I2 < h - s - b_upper``; the second is displaced by ``(I4, I3)``
    with both components strictly inside ``(b_low, b_upper)``.  All ranges are
    strict integer ranges.
    """
    bounds = OverlapBounds(*bounds)
    bounds.check(s)
    span_c = w - s - bounds.b_upper
    span_r = h - s - bounds.b_upper
    if span_c < 2 or span_r < 2:
        raise ImageTooSmall(
            f"{h}x{w} image too small for s={s}, b_upper={bounds.b_upper} "
            f"(need w, h > {s + bounds.b_upper + 1})")
    rng = as_generator(rng)
    i1 = int(rng.integers(1, span_c))
    i2 = int(rng.integers(1, span_r))
    i3 = int(rng.integers(bounds.b_low + 1, bounds.b_upper))
    i4 = int(rng.integers(bounds.b_low + 1, bounds.b_upper))
    first = PatchRect(i2, i1, i2 + s, i1 + s)
    return first, first.translate(i4, i3)


def draw_patch_size(size, rng):
    """``size`` is an int or an inclusive ``(lo, hi)`` range drawn per call."""
    if isinstance(size, (int, np.integer)):
        return int(size)
    lo, hi = size
    return int(as_generator(rng).integers(lo, hi + 1))


def overlap_in_local_coords(r1, r2, s):
    """Overlap of ``r2 = r1 + (d_r, d_c)`` expressed in each patch's own coordinates."""
    d_r = r2.u1 - r1.u1
    d_c = r2.u2 - r1.u2
    if d_r < 0 or d_c < 0:
        raise ValueError("second patch must lie below/right of the first")
    if d_r >= s or d_c >= s:
        raise NoOverlap(f"displacement ({d_r}, {d_c}) leaves no overlap for s={s}")
    return PatchRect(d_r, d_c, s, s), PatchRect(0, 0, s - d_r, s - d_c)


def valid_top_left_range(m, s, extent):
    """Inclusive range of top-left coordinates whose length-``s`` span covers ``m``."""
    return max(0, m - s + 1), min(m, extent - s)


def sample_patch_containing(m, s, w, h, rng):
    if s > w or s > h:
        raise PatchTooLarge(f"patch {s} exceeds image {h}x{w}")
    mr, mc = m
    if not (0 <= mr < h and 0 <= mc < w):
        raise ValueError(f"pixel {m} outside {h}x{w} image")
    rng = as_generator(rng)
    r_lo, r_hi = valid_top_left_range(mr, s, h)
    c_lo, c_hi = valid_top_left_range(mc, s, w)
    r = int(rng.integers(r_lo, r_hi + 1))
    c = int(rng.integers(c_lo, c_hi + 1))
    return PatchRect(r, c, r + s, c + s)


def sample_patch(s, w, h, rng):
    """Uniform patch with ``0 < I1 < w - s`` and ``0 < I2 < h - s`` (strict)."""
    if w - s < 2 or h - s < 2:
        raise ImageTooSmall(f"{h}x{w} image too small for random {s}x{s} patches")
    rng = as_generator(rng)
    c = int(rng.integers(1, w - s))
    r = int(rng.integers(1, h - s))
    return PatchRect(r, c, r + s, c + s)
