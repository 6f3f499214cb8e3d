"""Segmentation and image-quality metrics."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. empty masks)."""


def _pair(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise MetricError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(a, b) -> float:
    a, b = _pair(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        raise MetricError("dice is undefined for two empty masks")
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def surface_voxels(m) -> np.ndarray:
    """Coordinates (one row per voxel) of foreground voxels that touch the
    background through a face. Outside the grid counts as background."""
    m = np.asarray(m, dtype=bool)
    if not m.any():
        raise MetricError("surface of an empty mask is undefined")
    structure = ndimage.generate_binary_structure(m.ndim, 1)
    interior = ndimage.binary_erosion(m, structure=structure, border_value=0)
    return np.argwhere(m & ~interior)


def asd(a, b, spacing) -> float:
    """Average symmetric surface distance in mm between voxel-center surfaces.

    ``spacing`` is given per array axis.
    """
    a, b = _pair(a, b)
    spacing = np.asarray(spacing, dtype=np.float64)
    if spacing.shape != (a.ndim,):
        raise MetricError(f"spacing needs {a.ndim} entries, got {spacing.tolist()}")
    pa = surface_voxels(a) * spacing
    pb = surface_voxels(b) * spacing
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float((d_ab.sum() + d_ba.sum()) / (len(pa) + len(pb)))


def remove_islands(labels, fraction: float = 0.05) -> np.ndarray:
    """Drop 26-connected components smaller than ``fraction`` of their label's
    total voxel count. Components exactly at the threshold are kept, and so is
    each label's largest component when ``fraction`` is at most one half."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    labels = np.asarray(labels)
    out = labels.copy()
    structure = np.ones((3,) * labels.ndim, dtype=bool)
    for value in np.unique(labels):
        if value == 0:
            continue
        mask = labels == value
        comp, n = ndimage.label(mask, structure=structure)
        if n < 2:
            continue
        sizes = np.bincount(comp.ravel())[1:]
        small = sizes < fraction * mask.sum()
        if fraction <= 0.5:
            # a fragmented label keeps at least its largest piece
            small[np.argmax(sizes)] = False
        small = np.flatnonzero(small) + 1
        out[np.isin(comp, small)] = 0
    return out


def _roi_values(img, roi):
    img = np.asarray(img, dtype=np.float64)
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != img.shape:
        raise MetricError(f"roi shape {roi.shape} != image shape {img.shape}")
    if not roi.any():
        raise MetricError("roi is empty")
    return img[roi]


def region_std(img, roi) -> float:
    return float(np.std(_roi_values(img, roi)))


def rmse_region(a, b, roi) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = _roi_values(a - b, roi)
    return float(np.sqrt(np.mean(diff ** 2)))


def cupping(img, center_roi, annulus_roi) -> float:
    """Mean of the annulus minus mean of the center; positive means cupped."""
    return float(_roi_values(img, annulus_roi).mean() - _roi_values(img, center_roi).mean())


@dataclass
class LabelScore:
    label: int
    dice: float | None
    asd_mm: float | None
    error: str | None = None


@dataclass
class MetricsReport:
    dice: float | None = None
    asd_mm: float | None = None
    streak_std_hu: float | None = None
    cupping_hu: float | None = None
    per_label: list[LabelScore] = field(default_factory=list)

    def __post_init__(self):
        if self.dice is not None and not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice must lie in [0, 1], got {self.dice}")
        if self.asd_mm is not None and self.asd_mm < 0:
            raise ValueError(f"asd must be >= 0, got {self.asd_mm}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_label"] = [{k: v for k, v in s.items() if k != "error" or v is not None}
                            for s in out["per_label"]]
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def evaluate_labels(pred, ref, spacing) -> MetricsReport:
    """Score every non-zero label present in either volume.

    Per-label failures (a label missing from one side) are recorded on the
    label entry. The headline dice/asd are means over the labels that scored.
    """
    pred = np.asarray(pred)
    ref = np.asarray(ref)
    if pred.shape != ref.shape:
        raise MetricError(f"label volume shapes differ: {pred.shape} vs {ref.shape}")
    values = sorted(int(v) for v in np.union1d(np.unique(pred), np.unique(ref)) if v != 0)
    scores = []
    for v in values:
        a, b = pred == v, ref == v
        try:
            scores.append(LabelScore(v, dice(a, b), asd(a, b, spacing)))
        except MetricError as exc:
            scores.append(LabelScore(v, dice(a, b), None, str(exc)))
    ok = [s for s in scores if s.asd_mm is not None]
    report = MetricsReport(per_label=scores)
    if ok:
        report.dice = float(np.mean([s.dice for s in ok]))
        report.asd_mm = float(np.mean([s.asd_mm for s in ok]))
    return report
