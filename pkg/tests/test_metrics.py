import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from marforge.metrics import (MetricError, MetricsReport, asd, cupping, dice, evaluate_labels,
                              region_std, remove_islands, rmse_region, surface_voxels)


def _cube(n, lo, hi, shape=(12, 12, 12)):
    m = np.zeros(shape, bool)
    m[lo:hi, lo:hi, lo:hi] = True
    return m


def test_dice_examples():
    a = np.array([1, 1, 0, 0], bool)
    assert dice(a, a) == 1.0
    assert dice(a, ~a) == 0.0
    assert dice(a, np.array([1, 0, 0, 0], bool)) == pytest.approx(2 / 3)
    with pytest.raises(MetricError):
        dice(np.zeros(4, bool), np.zeros(4, bool))
    with pytest.raises(MetricError):
        dice(np.zeros(4, bool), np.zeros(5, bool))


@pytest.mark.parametrize("side,count", [(1, 1), (3, 26), (5, 98)])
def test_surface_counts(side, count):
    assert len(surface_voxels(_cube(12, 2, 2 + side))) == count


def test_surface_on_grid_border_and_empty():
    assert len(surface_voxels(np.ones((3, 3, 3), bool))) == 26
    with pytest.raises(MetricError):
        surface_voxels(np.zeros((3, 3), bool))


def test_asd_two_points():
    a = np.zeros((1, 1, 10), bool)
    b = np.zeros((1, 1, 10), bool)
    a[0, 0, 1] = True
    b[0, 0, 4] = True
    assert asd(a, b, (1.0, 1.0, 1.0)) == 3.0
    assert asd(a, b, (1.0, 1.0, 0.5)) == 1.5
    assert asd(a, a, (2.0, 2.0, 2.0)) == 0.0


def _brute_asd(a, b, spacing):
    pa = surface_voxels(a) * spacing
    pb = surface_voxels(b) * spacing
    d = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=-1))
    return (d.min(axis=1).sum() + d.min(axis=0).sum()) / (len(pa) + len(pb))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.tuples(*[st.floats(0.2, 3.0)] * 3))
def test_asd_matches_brute_force(seed, spacing):
    rng = np.random.default_rng(seed)
    a = rng.random((7, 8, 6)) < 0.3
    b = rng.random((7, 8, 6)) < 0.3
    a[0, 0, 0] = b[-1, -1, -1] = True
    assert asd(a, b, spacing) == pytest.approx(_brute_asd(a, b, np.array(spacing)), rel=1e-12)
    assert asd(a, b, spacing) == pytest.approx(asd(b, a, spacing), rel=1e-12)


def test_asd_errors():
    with pytest.raises(MetricError):
        asd(np.ones((3, 3), bool), np.zeros((3, 3), bool), (1, 1))
    with pytest.raises(MetricError):
        asd(np.ones((3, 3), bool), np.ones((3, 3), bool), (1, 1, 1))


def _two_blobs(big, small):
    labels = np.zeros((20, 20, 20), np.int16)
    block = np.zeros(labels.shape, bool)
    block[:5, :5, :5] = True
    labels.reshape(-1)[np.flatnonzero(block)[:big]] = 3
    labels[15, 15, 10:10 + small] = 3
    return labels


def test_island_removal_threshold():
    removed = remove_islands(_two_blobs(96, 4))
    assert (removed == 3).sum() == 96
    kept = remove_islands(_two_blobs(94, 6))
    assert (kept == 3).sum() == 100
    # exactly at 5 %: kept
    assert (remove_islands(_two_blobs(95, 5)) == 3).sum() == 100


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5), st.floats(0.05, 0.5))
def test_island_removal_invariants(seed, fraction, density):
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, 4, size=(12, 12, 12)) * (rng.random((12, 12, 12)) < density)
    once = remove_islands(labels, fraction)
    assert np.array_equal(remove_islands(once, fraction), once)
    for v in (1, 2, 3):
        assert (once == v).sum() <= (labels == v).sum()
        comp, n = ndimage.label(labels == v, structure=np.ones((3, 3, 3)))
        if n:
            largest = np.argmax(np.bincount(comp.ravel())[1:]) + 1
            assert np.all(once[comp == largest] == v)


def test_fragmented_label_keeps_largest_piece():
    labels = np.zeros((40, 40, 3), np.int8)
    labels[::4, ::4, 1] = 7
    labels[0, 0, 1] = labels[0, 1, 1] = 7
    out = remove_islands(labels)
    assert (out == 7).sum() == 2
    with pytest.raises(ValueError):
        remove_islands(labels, 1.5)


def test_region_statistics():
    img = np.array([[-1.0, 1.0], [-1.0, 1.0]])
    roi = np.ones((2, 2), bool)
    assert region_std(img, roi) == 1.0
    assert rmse_region(img + 4.0, img, roi) == 4.0
    center = np.array([[True, False], [False, False]])
    annulus = np.array([[False, True], [False, False]])
    assert cupping(img, center, annulus) == 2.0
    with pytest.raises(MetricError):
        region_std(img, np.zeros((2, 2), bool))
    with pytest.raises(MetricError):
        rmse_region(img, np.zeros((3, 2)), roi)


def test_evaluate_labels_report():
    ref = np.zeros((6, 6, 6), np.uint8)
    ref[1:3, 1:3, 1:3] = 1
    ref[4:6, 4:6, 4:6] = 2
    pred = ref.copy()
    pred[pred == 2] = 0
    report = evaluate_labels(pred, ref, (1, 1, 1))
    assert report.dice == 1.0 and report.asd_mm == 0.0
    assert report.per_label[1].error and report.per_label[1].dice == 0.0
    doc = json.loads(report.to_json())
    assert set(doc) == {"dice", "asd_mm", "streak_std_hu", "cupping_hu", "per_label"}
    assert "error" not in doc["per_label"][0]
    with pytest.raises(ValueError):
        MetricsReport(dice=1.5)
