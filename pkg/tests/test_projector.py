import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marforge import phantom
from marforge.core import ImageSlice, ScanGeometry, Unit, ValidationError
from marforge.projector import (FilterKind, back_project, back_project_array, fbp, fbp_array,
                                filter_response, filter_rows, filter_sinogram, forward_project,
                                forward_project_array, padded_length)


def _disk(n, spacing, radius, value):
    x, y = phantom.pixel_centers(n, spacing)
    return np.where(x ** 2 + y ** 2 <= radius ** 2, value, 0.0)


@pytest.fixture(scope="module")
def disk_case():
    n, dx = 256, 0.5
    img = _disk(n, dx, 50.0, 0.02)
    geom = ScanGeometry(90, 729, dx)
    return img, dx, geom, forward_project_array(img, dx, geom)


def test_zero_image_projects_to_zero():
    geom = ScanGeometry(12, 64, 1.0)
    s = forward_project(ImageSlice(np.zeros((32, 32)), 1.0, Unit.MU_PER_MM), geom)
    assert np.all(s.values == 0.0)


def test_disk_central_chord(disk_case):
    _, _, geom, sino = disk_case
    center = geom.n_detectors // 2
    assert geom.detector_positions[center] == 0.0
    np.testing.assert_allclose(sino[:, center], 2.0, rtol=0.01)


def test_disk_offset_chord(disk_case):
    _, dx, geom, sino = disk_case
    j = int(np.flatnonzero(np.isclose(geom.detector_positions, 30.0))[0])
    expected = 0.02 * 2 * math.sqrt(50 ** 2 - 30 ** 2)
    assert expected == pytest.approx(1.6)
    np.testing.assert_allclose(sino[:, j], expected, rtol=0.01)


def test_narrow_geometry_rejected():
    with pytest.raises(ValidationError):
        forward_project_array(np.zeros((64, 64)), 1.0, ScanGeometry(4, 64, 1.0))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_forward_projection_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    f, g = rng.normal(size=(2, 20, 20))
    geom = ScanGeometry(9, 32, 1.0)
    lhs = forward_project_array(a * f + b * g, 1.0, geom)
    rhs = a * forward_project_array(f, 1.0, geom) + b * forward_project_array(g, 1.0, geom)
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale


def test_centrally_symmetric_image_gives_symmetric_rows():
    rng = np.random.default_rng(1)
    f = rng.random((40, 40))
    f = f + f[::-1, ::-1]
    sino = forward_project_array(f, 1.0, ScanGeometry(16, 61, 1.0))
    np.testing.assert_allclose(sino, sino[:, ::-1], rtol=1e-12, atol=1e-12)


def test_filter_response_knots():
    m = padded_length(100)
    nf = m // 2 + 1
    ds = 0.7
    f_nyq = 0.5 / ds
    hann = filter_response(nf, ds, FilterKind.HANN)
    ramp = filter_response(nf, ds, FilterKind.RAMP)
    assert hann[0] == 0.0 and ramp[0] == 0.0
    assert abs(hann[-1]) < 1e-15
    assert ramp[-1] == pytest.approx(f_nyq, rel=1e-15)


def test_filter_zero_and_dc():
    ds = 1.0
    assert np.all(filter_rows(np.zeros((3, 50)), ds) == 0.0)
    row = np.full((1, 50), 3.7)
    for kind in FilterKind:
        full = filter_rows(row, ds, kind, crop=False)
        # H(0) = 0: the full circular output carries no DC
        assert abs(full.mean()) <= 1e-6 * 3.7


def _brute_kernel(h, m):
    n = np.arange(m)
    k = np.arange(h.size)
    weights = np.full(h.size, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    return (weights * h * np.cos(2 * np.pi * np.outer(n, k) / m)).sum(axis=1) / m


@pytest.mark.parametrize("kind", list(FilterKind))
def test_impulse_response_is_the_kernel(kind):
    n_det, ds = 48, 0.8
    m = padded_length(n_det)
    h = filter_response(m // 2 + 1, ds, kind)
    kernel = _brute_kernel(h, m)
    j0 = 17
    row = np.zeros((1, n_det))
    row[0, j0] = 1.0
    out = filter_rows(row, ds, kind, crop=False)[0]
    np.testing.assert_allclose(out, np.roll(kernel, j0), rtol=0, atol=1e-12 * np.abs(kernel).max())


def test_back_project_zero():
    geom = ScanGeometry(8, 40, 1.0)
    out = back_project_array(np.zeros((8, 40)), geom, (16, 16), 1.0)
    assert np.all(out == 0.0)


def test_back_project_single_view_constant_along_ray():
    geom = ScanGeometry(1, 64, 1.0)
    # view angle 0: rays run along y, i.e. down each image column
    const = back_project_array(np.ones((1, 64)), geom, (20, 20), 1.0, scale=False)
    np.testing.assert_array_equal(const, np.ones((20, 20)))
    ramp = back_project_array(np.arange(64.0)[None], geom, (20, 20), 1.0, scale=False)
    assert np.all(ramp == ramp[0:1, :])
    assert np.all(np.diff(ramp[0]) > 0)


def test_back_project_geometry_check():
    geom = ScanGeometry(4, 20, 1.0)
    with pytest.raises(ValidationError):
        back_project_array(np.zeros((3, 20)), geom, (8, 8), 1.0)


def test_disk_round_trip():
    n, dx = 256, 1.0
    img = _disk(n, dx, 60.0, 0.02)
    geom = ScanGeometry(720, 512, dx)
    rec = fbp_array(forward_project_array(img, dx, geom), geom, FilterKind.HANN, (n, n), dx)
    x, y = phantom.pixel_centers(n, dx)
    interior = np.hypot(x, y) <= 0.9 * 60.0
    rel = np.sqrt(np.mean((rec - img)[interior] ** 2)) / np.sqrt(np.mean(img[interior] ** 2))
    assert rel < 0.03


def test_fbp_linear_and_zero():
    geom = ScanGeometry(30, 64, 1.0)
    rng = np.random.default_rng(3)
    s = forward_project(ImageSlice(rng.random((32, 32)), 1.0, Unit.MU_PER_MM), geom)
    r1 = fbp(s, out_shape=(32, 32), out_spacing=1.0)
    r2 = fbp(s.with_values(2.0 * s.values), out_shape=(32, 32), out_spacing=1.0)
    np.testing.assert_allclose(r2.values, 2.0 * r1.values, rtol=1e-12, atol=1e-15)
    zero = fbp(s.with_values(np.zeros_like(s.values)), out_shape=(32, 32), out_spacing=1.0)
    assert np.all(zero.values == 0.0)
    assert r1.unit is Unit.MU_PER_MM


def test_fbp_is_filter_then_back_project():
    geom = ScanGeometry(20, 48, 1.0)
    rng = np.random.default_rng(4)
    s = forward_project(ImageSlice(rng.random((24, 24)), 1.0, Unit.MU_PER_MM), geom)
    direct = fbp(s, kind=FilterKind.RAMP, out_shape=(24, 24), out_spacing=1.0)
    composed = back_project(filter_sinogram(s, FilterKind.RAMP), out_shape=(24, 24), out_spacing=1.0)
    assert np.array_equal(direct.values, composed.values)


def test_thread_count_does_not_change_results():
    rng = np.random.default_rng(5)
    img = rng.random((48, 48))
    geom = ScanGeometry(37, 72, 1.0)
    one = forward_project_array(img, 1.0, geom, threads=1)
    many = forward_project_array(img, 1.0, geom, threads=4)
    assert np.array_equal(one, many)
    b1 = back_project_array(one, geom, (48, 48), 1.0, threads=1)
    b3 = back_project_array(one, geom, (48, 48), 1.0, threads=3)
    assert np.array_equal(b1, b3)
