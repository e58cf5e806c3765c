import numpy as np
import pytest
from hypothesis import given, strategies as st

from segconsist.errors import ImageTooSmall, NoOverlap, OutOfBounds, PatchTooLarge, PreconditionError, ShapeMismatch
from segconsist.geometry import (OverlapBounds, draw_patch_size, overlap_in_local_coords, sample_overlapping_pair,
                                 sample_patch, sample_patch_containing, valid_top_left_range)
from segconsist.tensor import PatchRect, apply_perturbation, as_image, crop, global_l2, linf


def test_global_l2_is_rms():
    r = np.zeros((4, 4, 3))
    r[0, 0, 0] = 4.8
    # sqrt(4.8^2 / 48)
    assert global_l2(r) == pytest.approx(4.8 / np.sqrt(48), abs=1e-15)
    assert global_l2(np.full((2, 2, 3), 0.06)) == pytest.approx(0.06)


def test_linf_and_empty():
    assert linf(np.array([[-3.0, 2.0]])) == 3.0
    with pytest.raises(ValueError):
        global_l2(np.zeros((0,)))


def test_apply_perturbation_clamps_image_not_r():
    img = np.full((2, 2, 3), 0.9)
    r = np.full((2, 2, 3), 0.5)
    out = apply_perturbation(img, r)
    assert out.max() == 1.0
    assert r.max() == 0.5
    with pytest.raises(ShapeMismatch):
        apply_perturbation(img, np.zeros((2, 2, 1)))


def test_as_image_promotes_grey_and_rejects_nan():
    assert as_image(np.zeros((3, 3))).shape == (3, 3, 1)
    with pytest.raises(ValueError):
        as_image(np.full((2, 2, 3), np.nan))
    with pytest.raises(ShapeMismatch):
        as_image(np.zeros(4))


def test_crop_half_open_and_bounds():
    x = np.arange(36).reshape(6, 6)
    np.testing.assert_array_equal(crop(x, PatchRect(1, 2, 3, 5)), x[1:3, 2:5])
    with pytest.raises(OutOfBounds):
        crop(x, PatchRect(0, 0, 7, 2))
    with pytest.raises(OutOfBounds):
        crop(x, PatchRect(2, 2, 2, 4))


def test_overlap_bounds_validation():
    OverlapBounds(8, 16).check(64)
    with pytest.raises(PreconditionError):
        OverlapBounds(16, 8).check(64)
    with pytest.raises(PreconditionError):
        OverlapBounds(8, 9).check(64)  # (8, 9) holds no integer


def test_pair_needs_room():
    with pytest.raises(ImageTooSmall):
        sample_overlapping_pair(64, 81, 128, (8, 16), 0)
    sample_overlapping_pair(64, 82, 82, (8, 16), 0)


@given(seed=st.integers(0, 2**32 - 1), s=st.integers(8, 40), extra=st.integers(2, 30))
def test_pair_ranges_are_strict(seed, s, extra):
    b = (2, min(6, s - 1)) if s > 4 else (1, 3)
    w = h = s + b[1] + extra
    r1, r2 = sample_overlapping_pair(s, w, h, b, seed)
    assert 0 < r1.u2 < w - s - b[1]
    assert 0 < r1.u1 < h - s - b[1]
    dr, dc = r2.u1 - r1.u1, r2.u2 - r1.u2
    assert b[0] < dr < b[1] and b[0] < dc < b[1]
    assert r2.u3 <= h and r2.u4 <= w
    o1, o2 = overlap_in_local_coords(r1, r2, s)
    # both local rectangles address the same global pixels
    assert (r1.u1 + o1.u1, r1.u2 + o1.u2) == (r2.u1 + o2.u1, r2.u2 + o2.u2)
    assert (o1.height, o1.width) == (o2.height, o2.width) == (s - dr, s - dc)


def test_overlap_content_matches():
    img = np.random.default_rng(0).random((100, 100))
    r1, r2 = sample_overlapping_pair(40, 100, 100, (4, 10), 3)
    o1, o2 = overlap_in_local_coords(r1, r2, 40)
    np.testing.assert_array_equal(crop(crop(img, r1), o1), crop(crop(img, r2), o2))


def test_no_overlap_raises():
    with pytest.raises(NoOverlap):
        overlap_in_local_coords(PatchRect(0, 0, 8, 8), PatchRect(8, 0, 16, 8), 8)


def test_draw_patch_size():
    assert draw_patch_size(64, None) == 64
    sizes = {draw_patch_size((10, 12), np.random.default_rng(i)) for i in range(50)}
    assert sizes == {10, 11, 12}


@given(seed=st.integers(0, 10**6), w=st.integers(12, 60), h=st.integers(12, 60), s=st.integers(2, 10))
def test_sample_patch_strict(seed, w, h, s):
    r = sample_patch(s, w, h, seed)
    assert 0 < r.u2 < w - s and 0 < r.u1 < h - s


@given(seed=st.integers(0, 10**6), m=st.tuples(st.integers(0, 19), st.integers(0, 29)), s=st.integers(1, 20))
def test_patch_containing_pixel(seed, m, s):
    r = sample_patch_containing(m, s, 30, 20, seed)
    assert r.u1 <= m[0] < r.u3 and r.u2 <= m[1] < r.u4
    assert r.u3 <= 20 and r.u4 <= 30


def test_patch_containing_too_large():
    with pytest.raises(PatchTooLarge):
        sample_patch_containing((0, 0), 21, 30, 20, 0)


def test_valid_top_left_range():
    # DERIVED: a length-4 span covering index 1 in an extent of 10 starts at 0 or 1
    assert valid_top_left_range(1, 4, 10) == (0, 1)
    assert valid_top_left_range(9, 4, 10) == (6, 6)
