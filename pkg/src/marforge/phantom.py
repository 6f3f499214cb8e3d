"""Analytic test phantoms.

Ellipse coordinates are in mm with the image center at the origin, x to
the right and y up; rotation is counter-clockwise in radians.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import ImageSlice, Unit, ValidationError

BACKGROUND_HU = -1000.0


@dataclass(frozen=True)
class EllipseSpec:
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    rotation: float = 0.0
    value: float = 0.0

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ValidationError(f"semi-axes must be > 0, got {self.semi_axes}")

    def contains(self, x, y):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        dx, dy = x - self.center[0], y - self.center[1]
        xr = dx * c + dy * s
        yr = -dx * s + dy * c
        return (xr / self.semi_axes[0]) ** 2 + (yr / self.semi_axes[1]) ** 2 <= 1.0


def pixel_centers(n: int, spacing: float):
    """Return (x, y) mm coordinate grids of pixel centers for an n x n image."""
    coords = (np.arange(n) - (n - 1) / 2.0) * spacing
    return np.meshgrid(coords, coords[::-1])


def rasterize(ellipses: Sequence[EllipseSpec], n: int, spacing: float) -> ImageSlice:
    """Sum ellipse values at pixel centers over a -1000 HU background."""
    if n < 16:
        raise ValidationError(f"grid size must be >= 16, got {n}")
    x, y = pixel_centers(n, spacing)
    img = np.full((n, n), BACKGROUND_HU)
    for e in ellipses:
        img[e.contains(x, y)] += e.value
    return ImageSlice(img, spacing, Unit.HU)


# (value, semi-axis a, semi-axis b, x0, y0, rotation deg) on the unit square
_SHEPP_LOGAN = [
    (2.00, 0.6900, 0.9200, 0.00, 0.0000, 0),
    (-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18),
    (0.01, 0.2100, 0.2500, 0.00, 0.3500, 0),
    (0.01, 0.0460, 0.0460, 0.00, 0.1000, 0),
    (0.01, 0.0460, 0.0460, 0.00, -0.1000, 0),
    (0.01, 0.0460, 0.0230, -0.08, -0.6050, 0),
    (0.01, 0.0230, 0.0230, 0.00, -0.6060, 0),
    (0.01, 0.0230, 0.0460, 0.06, -0.6050, 0),
]


def shepp_logan_ellipses(half_width: float) -> list[EllipseSpec]:
    """The classic 10-ellipse head phantom scaled to HU.

    Intensities follow the original definition (skull 2.0, brain 1.02) and
    map through ``HU = 1000 * (v - 1)``: skull 1000 HU, brain 20 HU, air
    -1000 HU.
    """
    out = []
    for value, a, b, x0, y0, deg in _SHEPP_LOGAN:
        out.append(EllipseSpec((x0 * half_width, y0 * half_width),
                               (a * half_width, b * half_width),
                               math.radians(deg), 1000.0 * value))
    return out


def shepp_logan(n: int, spacing: float = 1.0) -> ImageSlice:
    return rasterize(shepp_logan_ellipses(n * spacing / 2.0), n, spacing)


HIP_FOV_MM = 360.0
BODY = EllipseSpec((0.0, 0.0), (165.0, 115.0), 0.0, 1000.0)
BONES = (
    EllipseSpec((-75.0, -5.0), (28.0, 24.0), 0.0, 1200.0),
    EllipseSpec((75.0, -5.0), (28.0, 24.0), 0.0, 1200.0),
)
METAL_CENTERS = ((-75.0, -5.0), (75.0, -5.0))
METAL_RADIUS_MM = 8.0
METAL_HU = 3000.0
ROI_MARGIN_MM = 10.0
ROI_HALF_HEIGHT_MM = 30.0


def hip_phantom(n: int = 512, with_metal: bool = True):
    """Axial hip-like slice on a 360 mm field of view.

    Soft tissue body (0 HU) with two femoral-head bone ellipses (1200 HU).
    With ``with_metal`` an 8 mm radius iron insert sits in each bone at
    3000 HU. ``soft_roi`` is the soft-tissue band between the bones, kept
    10 mm clear of bone, metal and the body outline.

    Returns ``(image, metal_mask, soft_roi)``.
    """
    if n < 128:
        raise ValidationError(f"hip phantom needs n >= 128, got {n}")
    spacing = HIP_FOV_MM / n
    img = rasterize([BODY, *BONES], n, spacing).values.copy()
    x, y = pixel_centers(n, spacing)
    metal = np.zeros((n, n), dtype=bool)
    if with_metal:
        for cx, cy in METAL_CENTERS:
            metal |= (x - cx) ** 2 + (y - cy) ** 2 <= METAL_RADIUS_MM ** 2
        img[metal] = METAL_HU

    # keep-out region is everything but soft tissue, w.r.t. the metal variant
    soft = BODY.contains(x, y)
    for b in BONES:
        soft &= ~b.contains(x, y)
    clearance = ndimage.distance_transform_edt(soft) * spacing
    band = np.abs(y - METAL_CENTERS[0][1]) <= ROI_HALF_HEIGHT_MM
    between = np.abs(x) < abs(METAL_CENTERS[0][0])
    roi = soft & (clearance >= ROI_MARGIN_MM) & band & between
    return ImageSlice(img, spacing, Unit.HU), metal, roi


def water_cylinder(n: int = 256, diameter_mm: float = 200.0, fov_mm: float = HIP_FOV_MM):
    """Water disk in air. Returns ``(image, center_roi, annulus_roi)``.

    The center ROI is the inner 20% of the radius; the annulus spans 75-90%.
    """
    spacing = fov_mm / n
    r = diameter_mm / 2.0
    img = rasterize([EllipseSpec((0.0, 0.0), (r, r), 0.0, 1000.0)], n, spacing)
    x, y = pixel_centers(n, spacing)
    rho = np.hypot(x, y)
    center = rho <= 0.2 * r
    annulus = (rho >= 0.75 * r) & (rho <= 0.9 * r)
    return img, center, annulus
