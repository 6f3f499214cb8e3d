"""Normalized metal artifact reduction (NMAR) and the linear-interpolation
baseline it improves upon."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ScanGeometry, Sinogram, Unit, ValidationError, Volume, default_materials
from .physics import hu_to_mu, mu_to_hu
from .projector import FilterKind, fbp_array, forward_project_array


@dataclass(frozen=True)
class MarConfig:
    metal_threshold: float = 2000.0
    air_threshold: float = -500.0
    bone_threshold: float = 500.0
    # None: 1e-6 x max of the prior sinogram
    epsilon: float | None = None
    trace_epsilon: float = 1e-9
    e0: float = 40.0
    # build the prior from the LI-corrected image rather than the raw input
    prior_from_li: bool = True

    def __post_init__(self):
        if not self.air_threshold < self.bone_threshold < self.metal_threshold:
            raise ValidationError(
                "thresholds must satisfy air < bone < metal, got "
                f"{self.air_threshold} / {self.bone_threshold} / {self.metal_threshold}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")
        if not self.trace_epsilon >= 0:
            raise ValidationError("trace_epsilon must be >= 0")


def segment_metal(img, threshold: float = 2000.0) -> np.ndarray:
    return np.asarray(img) >= threshold


def build_prior(img, metal, cfg: MarConfig = MarConfig()) -> np.ndarray:
    """Three-class prior: air to -1000 HU, soft tissue to 0 HU, bone kept,
    metal replaced by soft tissue."""
    img = np.asarray(img, dtype=np.float64)
    metal = np.asarray(metal, dtype=bool)
    if metal.shape != img.shape:
        raise ValidationError(f"metal mask shape {metal.shape} != image shape {img.shape}")
    prior = np.where(img < cfg.air_threshold, -1000.0, np.where(img < cfg.bone_threshold, 0.0, img))
    prior[metal] = 0.0
    return prior


def metal_trace(metal, pixel_spacing: float, geom: ScanGeometry, trace_epsilon: float = 1e-9,
                threads: int | None = None) -> np.ndarray:
    """Sinogram bins whose ray passes through metal."""
    proj = forward_project_array(np.asarray(metal, dtype=np.float64), pixel_spacing, geom, threads)
    return proj > trace_epsilon


def _values(s):
    return s.values if isinstance(s, Sinogram) else np.asarray(s, dtype=np.float64)


def _interpolate_rows(norm: np.ndarray, trace: np.ndarray) -> np.ndarray:
    out = norm.copy()
    bins = np.arange(norm.shape[1])
    for v in np.flatnonzero(trace.any(axis=1)):
        inside = trace[v]
        if inside.all():
            # no anchor bins; row left as measured
            continue
        out[v, inside] = np.interp(bins[inside], bins[~inside], norm[v, ~inside])
    return out


def nmar_inpaint_array(s, prior_s, trace, epsilon: float | None = None) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    prior_s = np.broadcast_to(np.asarray(prior_s, dtype=np.float64), s.shape)
    trace = np.asarray(trace, dtype=bool)
    if trace.shape != s.shape:
        raise ValidationError(f"trace shape {trace.shape} != sinogram shape {s.shape}")
    if not trace.any():
        return s.copy()
    if epsilon is None:
        peak = float(prior_s.max())
        epsilon = 1e-6 * peak if peak > 0 else 1e-6
    denom = np.maximum(prior_s, epsilon)
    filled = _interpolate_rows(s / denom, trace) * denom
    return np.where(trace, filled, s)


def nmar_inpaint(s, prior_s, trace, epsilon: float | None = None):
    """Normalize by the prior's projection, interpolate across each run of
    trace bins along the detector axis, and denormalize.

    Bins outside ``trace`` are returned untouched. Accepts :class:`Sinogram`
    or plain arrays and returns the same kind as ``s``.
    """
    if isinstance(s, Sinogram):
        if isinstance(prior_s, Sinogram) and prior_s.geometry != s.geometry:
            raise ValidationError("sinogram and prior sinogram geometries differ")
        return s.with_values(nmar_inpaint_array(s.values, _values(prior_s), trace, epsilon))
    return nmar_inpaint_array(s, _values(prior_s), trace, epsilon)


def li_mar_inpaint(s, trace):
    """Plain linear interpolation across the metal trace."""
    return nmar_inpaint(s, 1.0, trace)


def nmar_slice(img, pixel_spacing: float, geom: ScanGeometry, cfg: MarConfig = MarConfig(),
               mu_water: float | None = None, method: str = "nmar", threads: int | None = None,
               dump: dict | None = None) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if mu_water is None:
        mu_water = float(default_materials().water.mu(cfg.e0))
    metal = segment_metal(img, cfg.metal_threshold)
    sino = forward_project_array(hu_to_mu(img, mu_water), pixel_spacing, geom, threads)
    trace = metal_trace(metal, pixel_spacing, geom, cfg.trace_epsilon, threads)
    if method not in ("nmar", "li"):
        raise ValidationError(f"unknown MAR method {method!r}")
    prior = None
    corrected = nmar_inpaint_array(sino, 1.0, trace)
    if method == "nmar" and trace.any():
        source = img
        if cfg.prior_from_li:
            li_mu = fbp_array(corrected, geom, FilterKind.HANN, img.shape, pixel_spacing, threads)
            source = mu_to_hu(li_mu, mu_water)
        prior = build_prior(source, metal, cfg)
        prior_s = forward_project_array(hu_to_mu(prior, mu_water), pixel_spacing, geom, threads)
        corrected = nmar_inpaint_array(sino, prior_s, trace, cfg.epsilon)
    if dump is not None:
        dump.update(metal=metal, prior=prior, trace=trace, sinogram=sino, corrected=corrected)
    out = mu_to_hu(fbp_array(corrected, geom, FilterKind.HANN, img.shape, pixel_spacing, threads),
                   mu_water)
    out[metal] = img[metal]
    return out


def nmar(img: Volume, geom: ScanGeometry | None = None, cfg: MarConfig = MarConfig(),
         mu_water: float | None = None, method: str = "nmar", threads: int | None = None,
         dumps: list | None = None) -> Volume:
    """NMAR applied slice by slice; metal voxels keep their input values.

    The prior is thresholded from the LI-corrected slice unless
    ``cfg.prior_from_li`` is off, in which case the input slice is used.
    ``method="li"`` stops after the linear-interpolation pass.
    """
    nz, ny, nx = img.values.shape
    if geom is None:
        geom = ScanGeometry.default_for(max(ny, nx), img.spacing[0])
    out = []
    for z in range(nz):
        dump = {} if dumps is not None else None
        out.append(nmar_slice(img.values[z], img.spacing[0], geom, cfg, mu_water, method,
                              threads, dump))
        if dumps is not None:
            dumps.append(dump)
    return Volume(np.stack(out), img.spacing, Unit.HU)
