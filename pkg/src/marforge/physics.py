"""Metal artifact simulation: tissue decomposition, polychromatic projection,
quantum noise, water beam-hardening correction and reconstruction."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import (ImageSlice, Materials, MaterialTable, Sinogram, SimulationConfig, Spectrum,
                   Unit, ValidationError, Volume, lookup_mass_attenuation, normalize_spectrum)
from .projector import FilterKind, fbp_array, forward_project_array

log = logging.getLogger(__name__)

WATER_KNOT_HU = 100.0
BONE_KNOT_HU = 1500.0


@dataclass(frozen=True)
class WeightPair:
    water: float
    bone: float


@dataclass(frozen=True)
class BhcTable:
    poly: np.ndarray
    thickness: np.ndarray
    mu_water_e0: float

    def __post_init__(self):
        if self.poly.shape != self.thickness.shape or self.poly.size < 2:
            raise ValidationError("BHC table needs >= 2 matching rows")
        if self.poly[0] != 0.0 or self.thickness[0] != 0.0:
            raise ValidationError("BHC table must start at (0, 0)")
        if np.any(np.diff(self.poly) <= 0):
            raise ValidationError("BHC table poly values must be strictly increasing")


def bone_fraction(hu):
    """Bone weight per voxel: 0 up to 100 HU, 1 from 1500 HU, linear between."""
    return np.clip((np.asarray(hu, dtype=np.float64) - WATER_KNOT_HU)
                   / (BONE_KNOT_HU - WATER_KNOT_HU), 0.0, 1.0)


def water_bone_weights(hu: float) -> WeightPair:
    w_b = float(bone_fraction(hu))
    return WeightPair(1.0 - w_b, w_b)


def hu_to_mu(hu, mu_water_e0: float):
    if not mu_water_e0 > 0:
        raise ValidationError("mu_water_e0 must be > 0")
    return np.maximum(0.0, mu_water_e0 * (1.0 + np.asarray(hu, dtype=np.float64) / 1000.0))


def mu_to_hu(mu, mu_water_e0: float):
    return 1000.0 * (np.asarray(mu, dtype=np.float64) - mu_water_e0) / mu_water_e0


def decompose(img: ImageSlice, metal: np.ndarray, e0: float, materials: Materials):
    """Split an HU slice into water, bone and metal attenuation images (1/mm)."""
    metal = np.asarray(metal, dtype=bool)
    if metal.shape != img.values.shape:
        raise ValidationError(f"metal mask shape {metal.shape} != image shape {img.values.shape}")
    mu = hu_to_mu(img.values, materials.water.mu(e0))
    w_b = bone_fraction(img.values)
    bone = np.where(metal, 0.0, w_b * mu)
    water = np.where(metal, 0.0, mu - w_b * mu)
    metal_img = np.where(metal, materials.iron.mu(e0), 0.0)
    return tuple(ImageSlice(v, img.pixel_spacing, Unit.MU_PER_MM) for v in (water, bone, metal_img))


def _energy_ratios(table: MaterialTable, energies, e0):
    return lookup_mass_attenuation(table, energies) / lookup_mass_attenuation(table, e0)


def polychromatic_array(p_w, p_b, p_m, spectrum: Spectrum, materials: Materials, e0: float):
    s = normalize_spectrum(spectrum)
    keep = s.weights > 0
    energies, weights = s.energies[keep], s.weights[keep]
    r_w = np.atleast_1d(_energy_ratios(materials.water, energies, e0))
    r_b = np.atleast_1d(_energy_ratios(materials.bone, energies, e0))
    r_m = np.atleast_1d(_energy_ratios(materials.iron, energies, e0))
    transmitted = np.zeros(np.shape(p_w))
    for k in range(energies.size):
        transmitted += weights[k] * np.exp(-(p_w * r_w[k] + p_b * r_b[k] + p_m * r_m[k]))
    # deep metal shadows can underflow every bin
    return -np.log(np.maximum(transmitted, np.finfo(np.float64).tiny))


def polychromatic_sinogram(p_w: Sinogram, p_b: Sinogram, p_m: Sinogram, spectrum: Spectrum,
                           materials: Materials, e0: float) -> Sinogram:
    """Combine per-material line integrals at E0 into the polychromatic
    projection ``-ln(sum_E s(E) exp(-L(E)))``."""
    if not p_w.geometry == p_b.geometry == p_m.geometry:
        raise ValidationError("basis sinograms must share one geometry")
    values = polychromatic_array(p_w.values, p_b.values, p_m.values, spectrum, materials, e0)
    return p_w.with_values(values)


def apply_poisson_array(values, n0: float, seed: int, stream: int = 0):
    values = np.asarray(values, dtype=np.float64)
    if not n0 > 0:
        raise ValidationError("n0 must be > 0")
    if np.any(values < 0):
        raise ValidationError("line integrals must be >= 0 before noise is applied")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))
    counts = rng.poisson(n0 * np.exp(-values))
    counts = np.maximum(counts, 1)
    return -np.log(counts / n0)


def apply_poisson(s: Sinogram, n0: float, seed: int, stream: int = 0) -> Sinogram:
    """Replace each line integral by ``-ln(k / n0)`` with ``k ~ Poisson(n0 e^-p)``.

    The generator is keyed on ``(seed, stream)`` and consumed in bin order,
    so a given bin of a given stream always sees the same draw. The
    simulator uses the slice index as the stream.
    """
    return s.with_values(apply_poisson_array(s.values, n0, seed, stream))


def build_bhc_table(spectrum: Spectrum, water: MaterialTable, e0: float, t_max: float = 1000.0,
                    n_samples: int = 2048) -> BhcTable:
    if n_samples < 2 or not t_max > 0:
        raise ValidationError("BHC table needs n_samples >= 2 and t_max > 0")
    s = normalize_spectrum(spectrum)
    keep = s.weights > 0
    mu = np.atleast_1d(water.mu(s.energies[keep]))
    t = np.linspace(0.0, t_max, n_samples)
    transmitted = np.exp(-np.outer(t, mu)) @ s.weights[keep]
    poly = -np.log(transmitted)
    poly[0] = 0.0
    assert np.all(np.diff(poly) > 0), "water BHC table is not monotone"
    return BhcTable(poly, t, float(water.mu(e0)))


def apply_bhc_array(values, table: BhcTable):
    p = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
    t = np.interp(p, table.poly, table.thickness)
    beyond = p > table.poly[-1]
    if np.any(beyond):
        slope = (table.thickness[-1] - table.thickness[-2]) / (table.poly[-1] - table.poly[-2])
        t = np.where(beyond, table.thickness[-1] + slope * (p - table.poly[-1]), t)
    return table.mu_water_e0 * t


def apply_bhc(s: Sinogram, table: BhcTable) -> Sinogram:
    """Map polychromatic projections to water-equivalent line integrals at E0."""
    return s.with_values(apply_bhc_array(s.values, table))


def simulate_slice(img: ImageSlice, metal: np.ndarray, cfg: SimulationConfig, stream: int = 0,
                   threads: int | None = None, bhc_table: BhcTable | None = None,
                   dump: dict | None = None) -> np.ndarray:
    """Run the full simulation chain on one HU slice; returns HU values.

    When ``dump`` is a dict, intermediate sinograms are stored in it.
    """
    materials = cfg.resolved_materials()
    spectrum = cfg.resolved_spectrum()
    geom = cfg.resolved_geometry(img.values.shape, img.pixel_spacing)
    dx = img.pixel_spacing
    mu_w = float(materials.water.mu(cfg.e0))
    parts = decompose(img, metal, cfg.e0, materials)
    p_w, p_b, p_m = (forward_project_array(p.values, dx, geom, threads) for p in parts)
    sino = polychromatic_array(p_w, p_b, p_m, spectrum, materials, cfg.e0)
    if dump is not None:
        dump.update(water=p_w, bone=p_b, metal=p_m, poly=sino)
    if cfg.noise_enabled:
        sino = apply_poisson_array(sino, cfg.n0, cfg.seed, stream)
        if dump is not None:
            dump["noisy"] = sino
    if cfg.bhc_enabled:
        if bhc_table is None:
            bhc_table = build_bhc_table(spectrum, materials.water, cfg.e0, cfg.bhc_t_max,
                                        cfg.bhc_samples)
        sino = apply_bhc_array(sino, bhc_table)
        if dump is not None:
            dump["corrected"] = sino
    mu = fbp_array(sino, geom, FilterKind.HANN, img.values.shape, dx, threads)
    return mu_to_hu(mu, mu_w)


def simulate_artifact(img: Volume, metal: np.ndarray, cfg: SimulationConfig,
                      threads: int | None = None, dumps: list | None = None) -> Volume:
    """Metal artifact simulation applied slice by slice to an HU volume."""
    metal = np.asarray(metal, dtype=bool)
    if metal.ndim == 2:
        metal = metal[np.newaxis]
    if metal.shape != img.values.shape:
        raise ValidationError(f"metal mask shape {metal.shape} != volume shape {img.values.shape}")
    materials = cfg.resolved_materials()
    table = None
    if cfg.bhc_enabled:
        table = build_bhc_table(cfg.resolved_spectrum(), materials.water, cfg.e0, cfg.bhc_t_max,
                                cfg.bhc_samples)
    out = []
    for z in range(img.values.shape[0]):
        log.debug("simulating slice %d/%d", z + 1, img.values.shape[0])
        dump = {} if dumps is not None else None
        out.append(simulate_slice(img.slice(z), metal[z], cfg, stream=z, threads=threads,
                                  bhc_table=table, dump=dump))
        if dumps is not None:
            dumps.append(dump)
    return Volume(np.stack(out), img.spacing, Unit.HU)
