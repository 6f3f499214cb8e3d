"""Parallel-beam forward projection, ramp filtering and back projection.

World coordinates put the image center at the origin with x along columns
and y pointing up (decreasing row). A ray at view angle ``theta`` and
detector offset ``u`` is ``u * (cos, sin) + t * (-sin, cos)``.
"""
from __future__ import annotations

import math
from enum import Enum

import numba
import numpy as np

from .core import ImageSlice, ScanGeometry, Sinogram, Unit, ValidationError
from .parallel import run_chunked


class FilterKind(str, Enum):
    RAMP = "RAMP"
    HANN = "HANN"


@numba.njit(nogil=True, cache=True, fastmath=False)
def _forward_kernel(img, dx, cos_t, sin_t, det_u, step, lo, hi, out):
    ny, nx = img.shape
    cx = (nx - 1) / 2.0
    cy = (ny - 1) / 2.0
    # one extra pixel so bilinear support at the corners is inside the circle
    radius = 0.5 * math.sqrt(nx * nx + ny * ny) * dx + dx
    for v in range(lo, hi):
        c = cos_t[v]
        s = sin_t[v]
        for j in range(det_u.shape[0]):
            u = det_u[j]
            if abs(u) >= radius:
                out[v, j] = 0.0
                continue
            half = math.sqrt(radius * radius - u * u)
            n_steps = int(math.ceil(2.0 * half / step))
            t0 = -0.5 * n_steps * step
            acc = 0.0
            for k in range(n_steps):
                t = t0 + (k + 0.5) * step
                fx = (u * c - t * s) / dx + cx
                fy = cy - (u * s + t * c) / dx
                ix = math.floor(fx)
                iy = math.floor(fy)
                if ix < -1 or iy < -1 or ix >= nx or iy >= ny:
                    continue
                wx = fx - ix
                wy = fy - iy
                val = 0.0
                if iy >= 0:
                    if ix >= 0:
                        val += (1.0 - wx) * (1.0 - wy) * img[iy, ix]
                    if ix + 1 < nx:
                        val += wx * (1.0 - wy) * img[iy, ix + 1]
                if iy + 1 < ny:
                    if ix >= 0:
                        val += (1.0 - wx) * wy * img[iy + 1, ix]
                    if ix + 1 < nx:
                        val += wx * wy * img[iy + 1, ix + 1]
                acc += val
            out[v, j] = acc * step


@numba.njit(nogil=True, cache=True, fastmath=False)
def _back_kernel(sino, ds, cos_t, sin_t, dx, lo, hi, out):
    n_views, n_det = sino.shape
    ny, nx = out.shape
    cx = (nx - 1) / 2.0
    cy = (ny - 1) / 2.0
    cu = (n_det - 1) / 2.0
    for iy in range(lo, hi):
        y = (cy - iy) * dx
        for ix in range(nx):
            x = (ix - cx) * dx
            acc = 0.0
            for v in range(n_views):
                fu = (x * cos_t[v] + y * sin_t[v]) / ds + cu
                i0 = math.floor(fu)
                if i0 < -1 or i0 >= n_det:
                    continue
                w = fu - i0
                if i0 >= 0:
                    acc += (1.0 - w) * sino[v, i0]
                if i0 + 1 < n_det:
                    acc += w * sino[v, i0 + 1]
            out[iy, ix] = acc


def _trig(geom: ScanGeometry):
    theta = geom.angles
    return np.cos(theta), np.sin(theta)


def forward_project_array(values: np.ndarray, pixel_spacing: float, geom: ScanGeometry,
                          threads: int | None = None) -> np.ndarray:
    img = np.ascontiguousarray(values, dtype=np.float64)
    if not geom.covers(img.shape, pixel_spacing):
        raise ValidationError(
            f"detector span {geom.span:.2f} mm does not cover the image diagonal "
            f"{math.hypot(*img.shape) * pixel_spacing:.2f} mm")
    cos_t, sin_t = _trig(geom)
    det_u = geom.detector_positions
    out = np.zeros((geom.n_views, geom.n_detectors))
    step = 0.5 * pixel_spacing
    run_chunked(lambda lo, hi: _forward_kernel(img, pixel_spacing, cos_t, sin_t, det_u,
                                               step, lo, hi, out),
                geom.n_views, threads)
    return out


def forward_project(img: ImageSlice, geom: ScanGeometry, threads: int | None = None) -> Sinogram:
    """Ray-driven line integrals of ``img`` (bilinear sampling, half-pixel steps)."""
    return Sinogram(geom, forward_project_array(img.values, img.pixel_spacing, geom, threads))


def filter_response(n_freq: int, detector_spacing: float, kind: FilterKind | str) -> np.ndarray:
    """Frequency response on the ``rfft`` grid of padded length ``2 * (n_freq - 1)``."""
    kind = FilterKind(kind)
    m = 2 * (n_freq - 1)
    f = np.fft.rfftfreq(m, d=detector_spacing)
    f_nyq = 0.5 / detector_spacing
    h = np.abs(f)
    if kind is FilterKind.HANN:
        h = h * (0.5 + 0.5 * np.cos(np.pi * f / f_nyq))
        h[f > f_nyq] = 0.0
    return h


def padded_length(n_detectors: int) -> int:
    return 1 << int(math.ceil(math.log2(2 * n_detectors)))


def filter_rows(rows: np.ndarray, detector_spacing: float, kind: FilterKind | str = FilterKind.HANN,
                crop: bool = True) -> np.ndarray:
    """Filter each row with the windowed ramp via a zero-padded FFT.

    With ``crop=False`` the full circular result of padded length is
    returned, which is what the DC and impulse checks look at.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    n = rows.shape[-1]
    m = padded_length(n)
    h = filter_response(m // 2 + 1, detector_spacing, kind)
    spec = np.fft.rfft(rows, n=m, axis=-1)
    out = np.fft.irfft(spec * h, n=m, axis=-1)
    return out[..., :n] if crop else out


def filter_sinogram(s: Sinogram, kind: FilterKind | str = FilterKind.HANN) -> Sinogram:
    return s.with_values(filter_rows(s.values, s.geometry.detector_spacing, kind))


def back_project_array(values: np.ndarray, geom: ScanGeometry, out_shape, out_spacing: float,
                       scale: bool = True, threads: int | None = None) -> np.ndarray:
    sino = np.ascontiguousarray(values, dtype=np.float64)
    if sino.shape != (geom.n_views, geom.n_detectors):
        raise ValidationError(f"sinogram shape {sino.shape} does not match geometry")
    cos_t, sin_t = _trig(geom)
    out = np.zeros(tuple(out_shape))
    run_chunked(lambda lo, hi: _back_kernel(sino, geom.detector_spacing, cos_t, sin_t,
                                            out_spacing, lo, hi, out),
                out.shape[0], threads)
    if scale:
        out *= np.pi / geom.n_views
    return out


def back_project(s: Sinogram, geom: ScanGeometry | None = None, out_shape=(512, 512),
                 out_spacing: float = 1.0, scale: bool = True,
                 threads: int | None = None) -> ImageSlice:
    """Pixel-driven back projection with linear detector interpolation.

    ``scale`` multiplies by ``pi / n_views`` so that back projection of the
    ramp-filtered projections of ``f`` approximates ``f``.
    """
    geom = geom or s.geometry
    if geom != s.geometry:
        raise ValidationError("sinogram geometry does not match the requested geometry")
    values = back_project_array(s.values, geom, out_shape, out_spacing, scale, threads)
    return ImageSlice(values, out_spacing, Unit.MU_PER_MM)


def fbp_array(values: np.ndarray, geom: ScanGeometry, kind, out_shape, out_spacing: float,
              threads: int | None = None) -> np.ndarray:
    filtered = filter_rows(values, geom.detector_spacing, kind)
    return back_project_array(filtered, geom, out_shape, out_spacing, True, threads)


def fbp(s: Sinogram, geom: ScanGeometry | None = None, kind: FilterKind | str = FilterKind.HANN,
        out_shape=(512, 512), out_spacing: float = 1.0, threads: int | None = None) -> ImageSlice:
    return back_project(filter_sinogram(s, kind), geom, out_shape, out_spacing, True, threads)
