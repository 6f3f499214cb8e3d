import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from marforge import phantom
from marforge.core import ScanGeometry, Sinogram, ValidationError, Volume, default_materials
from marforge.mar import (MarConfig, build_prior, li_mar_inpaint, metal_trace, nmar,
                          nmar_inpaint, nmar_inpaint_array, segment_metal)
from marforge.physics import hu_to_mu, mu_to_hu
from marforge.projector import FilterKind, fbp_array, forward_project_array

MU_W = default_materials().water.mu(40.0)


def test_segment_metal_threshold_inclusive():
    img = np.array([1999.999, 2000.0, 2000.001, -1000.0, 3000.0])
    assert segment_metal(img).tolist() == [False, True, True, False, True]
    assert segment_metal(img, 2500.0).tolist() == [False, False, False, False, True]


def test_prior_classes():
    img = np.array([[-1000.0, -501.0, -500.0, 40.0], [499.0, 500.0, 1400.0, 3000.0]])
    metal = segment_metal(img)
    prior = build_prior(img, metal)
    assert prior.tolist() == [[-1000.0, -1000.0, 0.0, 0.0], [0.0, 500.0, 1400.0, 0.0]]


def test_prior_shape_checked():
    with pytest.raises(ValidationError):
        build_prior(np.zeros((4, 4)), np.zeros((4, 3), bool))


@pytest.mark.parametrize("kw", [dict(air_threshold=600.0), dict(bone_threshold=2500.0),
                                dict(metal_threshold=-600.0), dict(epsilon=0.0),
                                dict(trace_epsilon=-1.0)])
def test_invalid_config(kw):
    with pytest.raises(ValidationError):
        MarConfig(**kw)


def test_trace_empty_single_and_full():
    geom = ScanGeometry(36, 61, 1.0)
    none = np.zeros((32, 32), bool)
    assert not metal_trace(none, 1.0, geom).any()
    one = none.copy()
    one[10, 20] = True
    trace = metal_trace(one, 1.0, geom)
    assert np.all(trace.sum(axis=1) >= 1)
    # a single pixel never shadows more than a few detector bins
    assert np.all(trace.sum(axis=1) <= 4)
    full = metal_trace(np.ones((32, 32), bool), 1.0, geom)
    assert full[:, geom.n_detectors // 2].all()


def test_inpaint_hand_example():
    s = np.array([[2.0, 4.0, 99.0, -7.0, 10.0]])
    prior = np.array([[1.0, 2.0, 2.0, 2.0, 5.0]])
    trace = np.array([[False, False, True, True, False]])
    out = nmar_inpaint(s, prior, trace)
    # normalized [2, 2, ?, ?, 2] is flat, so the gap fills with prior x 2
    np.testing.assert_allclose(out, [[2.0, 4.0, 4.0, 4.0, 10.0]], rtol=1e-15)


def test_li_hand_example():
    s = np.array([[2.0, 4.0, 0.0, 0.0, 10.0]])
    trace = np.array([[False, False, True, True, False]])
    np.testing.assert_allclose(li_mar_inpaint(s, trace), [[2.0, 4.0, 6.0, 8.0, 10.0]], rtol=1e-15)


def test_edge_runs_hold_nearest_value_and_full_rows_untouched():
    s = np.array([[5.0, 5.0, 3.0, 1.0], [1.0, 2.0, 3.0, 4.0]])
    trace = np.array([[True, True, False, False], [True, True, True, True]])
    out = li_mar_inpaint(s, trace)
    assert out[0].tolist() == [3.0, 3.0, 3.0, 1.0]
    assert out[1].tolist() == s[1].tolist()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_inpaint_properties(seed, scale):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, 5.0, size=(6, 25))
    prior = rng.uniform(0.5, 5.0, size=(6, 25))
    trace = rng.random((6, 25)) < 0.3
    out = nmar_inpaint(s, prior, trace)
    assert np.array_equal(out[~trace], s[~trace])
    np.testing.assert_allclose(nmar_inpaint(s * scale, prior, trace), out * scale, rtol=1e-12)
    np.testing.assert_allclose(nmar_inpaint(s, np.ones_like(s), trace), li_mar_inpaint(s, trace),
                               rtol=0, atol=0)


def test_inpaint_empty_trace_and_shape_errors():
    s = np.arange(12.0).reshape(3, 4)
    out = nmar_inpaint_array(s, np.ones_like(s), np.zeros_like(s, bool))
    assert np.array_equal(out, s) and out is not s
    with pytest.raises(ValidationError):
        nmar_inpaint_array(s, 1.0, np.zeros((3, 5), bool))
    a = Sinogram(ScanGeometry(3, 4, 1.0), s)
    b = Sinogram(ScanGeometry(3, 4, 2.0), s)
    with pytest.raises(ValidationError):
        nmar_inpaint(a, b, np.zeros((3, 4), bool))
    assert isinstance(nmar_inpaint(a, a, np.zeros((3, 4), bool)), Sinogram)


def test_metal_free_slice_is_exact_round_trip():
    img = phantom.shepp_logan(96, 1.0)
    geom = ScanGeometry.default_for(96, 1.0, n_views=180)
    out = nmar(Volume(img.values, (1.0, 1.0, 1.0)), geom).values[0]
    rt = mu_to_hu(fbp_array(forward_project_array(hu_to_mu(img.values, MU_W), 1.0, geom), geom,
                            FilterKind.HANN, (96, 96), 1.0), MU_W)
    assert np.array_equal(out, rt)


@pytest.mark.parametrize("method", ["nmar", "li"])
def test_metal_voxels_reinserted(method):
    img, metal, _ = phantom.hip_phantom(128, with_metal=True)
    geom = ScanGeometry.default_for(128, img.pixel_spacing, n_views=180)
    dumps = []
    out = nmar(Volume(img.values, (img.pixel_spacing,) * 3), geom, method=method, dumps=dumps)
    seg = segment_metal(img.values)
    assert np.array_equal(out.values[0][seg], img.values[seg])
    assert dumps[0]["trace"].any()
    assert (dumps[0]["prior"] is None) == (method == "li")


def test_prior_from_input_branch_runs():
    img, metal, roi = phantom.hip_phantom(128, with_metal=True)
    geom = ScanGeometry.default_for(128, img.pixel_spacing, n_views=180)
    vol = Volume(img.values, (img.pixel_spacing,) * 3)
    dumps = []
    nmar(vol, geom, MarConfig(prior_from_li=False), dumps=dumps)
    expected = build_prior(img.values, segment_metal(img.values))
    assert np.array_equal(dumps[0]["prior"], expected)


def test_unknown_method():
    with pytest.raises(ValidationError):
        nmar(Volume(np.zeros((1, 32, 32)), (1, 1, 1)), method="magic")
