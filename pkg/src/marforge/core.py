"""Domain types shared across marforge: grids, scan geometry, spectra and
material tables, plus the handful of operations that act on them directly.

Lengths are in mm and linear attenuation in 1/mm everywhere. Arrays are
indexed ``[row, col]`` for slices and ``[z, y, x]`` for volumes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a type invariant or precondition."""


class Unit(str, Enum):
    HU = "HU"
    MU_PER_MM = "MU_PER_MM"
    LABEL = "LABEL"


def _frozen(values, dtype=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ImageSlice:
    values: np.ndarray
    pixel_spacing: float
    unit: Unit = Unit.HU

    def __post_init__(self):
        values = _frozen(self.values, dtype=np.float64)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValidationError(f"ImageSlice needs a non-empty 2D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("ImageSlice values must be finite")
        if not self.pixel_spacing > 0:
            raise ValidationError(f"pixel_spacing must be > 0, got {self.pixel_spacing}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "unit", Unit(self.unit))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Volume:
    """3D grid stored ``[z, y, x]``; ``spacing`` is ``(sx, sy, sz)`` in mm."""

    values: np.ndarray
    spacing: tuple[float, float, float]
    unit: Unit = Unit.HU

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim == 2:
            values = values[np.newaxis]
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValidationError(f"Volume needs a non-empty 3D grid, got shape {values.shape}")
        if values.dtype.kind not in "fiub":
            raise ValidationError(f"unsupported volume dtype {values.dtype}")
        values = _frozen(values, dtype=values.dtype if values.dtype.kind == "f" else np.float64)
        if not np.all(np.isfinite(values)):
            raise ValidationError("Volume values must be finite")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValidationError(f"spacing must be three positive lengths, got {self.spacing}")
        unit = Unit(self.unit)
        if unit is Unit.LABEL and (np.any(values < 0) or np.any(values != np.round(values))):
            raise ValidationError("LABEL volumes must hold non-negative integers")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "unit", unit)

    @property
    def dims(self) -> tuple[int, int, int]:
        nz, ny, nx = self.values.shape
        return nx, ny, nz

    def slice(self, z: int) -> ImageSlice:
        unit = Unit.HU if self.unit is Unit.LABEL else self.unit
        return ImageSlice(self.values[z], self.spacing[0], unit)

    @classmethod
    def from_slices(cls, slices: Sequence[np.ndarray], spacing, unit=Unit.HU) -> "Volume":
        return cls(np.stack([np.asarray(s) for s in slices]), spacing, unit)


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam geometry with views uniformly spaced over [0, pi)."""

    n_views: int
    n_detectors: int
    detector_spacing: float

    def __post_init__(self):
        if self.n_views < 1:
            raise ValidationError("n_views must be >= 1")
        if self.n_detectors < 2:
            raise ValidationError("n_detectors must be >= 2")
        if not self.detector_spacing > 0:
            raise ValidationError("detector_spacing must be > 0")

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_views) * (np.pi / self.n_views)

    @property
    def detector_positions(self) -> np.ndarray:
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    @property
    def span(self) -> float:
        return self.n_detectors * self.detector_spacing

    def covers(self, shape: tuple[int, int], pixel_spacing: float) -> bool:
        diagonal = math.hypot(shape[0], shape[1]) * pixel_spacing
        return self.span >= diagonal - 1e-9

    @classmethod
    def default_for(cls, n: int, pixel_spacing: float, n_views: int = 720) -> "ScanGeometry":
        """720 views, detector pitch equal to the pixel pitch and an odd
        detector count a few bins wider than the image diagonal (729 for 512)."""
        n_det = int(math.ceil(n * math.sqrt(2.0))) + 4
        if n_det % 2 == 0:
            n_det += 1
        return cls(n_views, n_det, pixel_spacing)


@dataclass(frozen=True)
class Sinogram:
    geometry: ScanGeometry
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values, dtype=np.float64)
        expected = (self.geometry.n_views, self.geometry.n_detectors)
        if values.shape != expected:
            raise ValidationError(f"sinogram shape {values.shape} does not match geometry {expected}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("sinogram values must be finite")
        object.__setattr__(self, "values", values)

    def with_values(self, values) -> "Sinogram":
        return Sinogram(self.geometry, values)


@dataclass(frozen=True)
class Spectrum:
    energies: np.ndarray
    weights: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        energies = _frozen(self.energies, dtype=np.float64)
        weights = _frozen(self.weights, dtype=np.float64)
        if energies.ndim != 1 or energies.size < 1 or energies.shape != weights.shape:
            raise ValidationError("spectrum needs matching 1D energy and weight arrays with >= 1 bin")
        if np.any(np.diff(energies) <= 0):
            raise ValidationError("spectrum energies must be strictly ascending")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValidationError("spectrum weights must be finite and non-negative")
        if weights.sum() <= 0:
            raise ValidationError("spectrum total weight must be > 0")
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def monochromatic(cls, energy: float) -> "Spectrum":
        return cls(np.array([energy]), np.array([1.0]), normalized=True)

    @property
    def energy_range(self) -> tuple[float, float]:
        return float(self.energies[0]), float(self.energies[-1])


@dataclass(frozen=True)
class MaterialTable:
    name: str
    density: float
    energies: np.ndarray
    mass_attenuation: np.ndarray

    def __post_init__(self):
        energies = _frozen(self.energies, dtype=np.float64)
        mass = _frozen(self.mass_attenuation, dtype=np.float64)
        if energies.ndim != 1 or energies.size < 2 or energies.shape != mass.shape:
            raise ValidationError(f"{self.name}: table needs >= 2 matching rows")
        if np.any(np.diff(energies) <= 0):
            raise ValidationError(f"{self.name}: energies must be strictly ascending")
        if np.any(mass <= 0):
            raise ValidationError(f"{self.name}: mass attenuation must be > 0")
        if not self.density > 0:
            raise ValidationError(f"{self.name}: density must be > 0")
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "mass_attenuation", mass)

    @property
    def energy_range(self) -> tuple[float, float]:
        return float(self.energies[0]), float(self.energies[-1])

    def mu(self, energy) -> np.ndarray | float:
        """Linear attenuation in 1/mm: density [g/cm3] * (mu/rho) [cm2/g] / 10."""
        return self.density * lookup_mass_attenuation(self, energy) / 10.0


@dataclass(frozen=True)
class Materials:
    water: MaterialTable
    bone: MaterialTable
    iron: MaterialTable


@dataclass(frozen=True)
class SimulationConfig:
    """Settings for the metal artifact simulation.

    ``spectrum``/``materials`` left as None resolve to the bundled data and
    ``geometry`` left as None resolves to :meth:`ScanGeometry.default_for`.
    """

    e0: float = 40.0
    spectrum: Spectrum | None = None
    materials: Materials | None = None
    n0: float = 2e7
    noise_enabled: bool = True
    bhc_enabled: bool = True
    seed: int = 0
    geometry: ScanGeometry | None = None
    n_views: int = 720
    bhc_t_max: float = 1000.0
    bhc_samples: int = 2048

    def __post_init__(self):
        if not self.n0 > 0:
            raise ValidationError("n0 must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        lo, hi = self.resolved_spectrum().energy_range
        if not lo <= self.e0 <= hi:
            raise ValidationError(f"e0={self.e0} keV outside spectrum range [{lo}, {hi}]")

    def resolved_spectrum(self) -> Spectrum:
        return self.spectrum if self.spectrum is not None else default_spectrum()

    def resolved_materials(self) -> Materials:
        return self.materials if self.materials is not None else default_materials()

    def resolved_geometry(self, shape: tuple[int, int], pixel_spacing: float) -> ScanGeometry:
        if self.geometry is not None:
            return self.geometry
        return ScanGeometry.default_for(max(shape), pixel_spacing, self.n_views)


def lookup_mass_attenuation(table: MaterialTable, energy):
    """Log-log interpolated mass attenuation (cm2/g) at ``energy`` keV."""
    e = np.asarray(energy, dtype=np.float64)
    lo, hi = table.energy_range
    if np.any(e < lo) or np.any(e > hi) or not np.all(np.isfinite(e)):
        raise ValidationError(f"{table.name}: energy outside table range [{lo}, {hi}] keV")
    log_e = np.log(e)
    knots = np.log(table.energies)
    vals = np.log(table.mass_attenuation)
    idx = np.clip(np.searchsorted(knots, log_e, side="right") - 1, 0, knots.size - 2)
    frac = (log_e - knots[idx]) / (knots[idx + 1] - knots[idx])
    out = np.exp(vals[idx] + frac * (vals[idx + 1] - vals[idx]))
    # exact at knots, not exp(log(x))
    out = np.where(log_e == knots[idx], table.mass_attenuation[idx], out)
    out = np.where(e == table.energies[-1], table.mass_attenuation[-1], out)
    return float(out) if out.ndim == 0 else out


def normalize_spectrum(s: Spectrum) -> Spectrum:
    total = s.weights.sum()
    if total <= 0:
        raise ValidationError("cannot normalize an all-zero spectrum")
    return Spectrum(s.energies, s.weights / total, normalized=True)


def resample_uniform_z(v: Volume, target_sz: float) -> Volume:
    """Linearly resample ``v`` along z to slice thickness ``target_sz``.

    Output slices start at the first input slice position; enough slices are
    emitted to reach the last input position (the final one may sit up to one
    step past it and then repeats the edge value).
    """
    nz = v.values.shape[0]
    if nz < 2:
        raise ValidationError("resample_uniform_z needs at least 2 slices")
    if not target_sz > 0:
        raise ValidationError("target_sz must be > 0")
    sz = v.spacing[2]
    extent = (nz - 1) * sz
    n_out = int(math.ceil(extent / target_sz - 1e-9)) + 1
    pos = np.arange(n_out) * target_sz / sz
    if n_out == nz and np.allclose(pos, np.arange(nz), rtol=0, atol=1e-12):
        return Volume(v.values.copy(), (v.spacing[0], v.spacing[1], target_sz), v.unit)
    lo = np.clip(np.floor(pos).astype(int), 0, nz - 2)
    # positions past the last slice hold the edge value
    frac = np.minimum(pos - lo, 1.0)[:, None, None]
    data = v.values.astype(np.float64)
    out = data[lo] * (1.0 - frac) + data[lo + 1] * frac
    return Volume(out, (v.spacing[0], v.spacing[1], target_sz), v.unit)


# ---------------------------------------------------------------- CSV input

def _read_comment_csv(path) -> tuple[list[str], list[list[str]], list[str]]:
    comments, rows, header = [], [], None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                comments.append(text[1:].strip())
                continue
            cells = next(csv.reader([text]))
            if header is None:
                header = [c.strip() for c in cells]
                continue
            rows.append([lineno, *cells])
    if header is None:
        raise ValidationError(f"{path}: missing header row")
    return header, rows, comments


def _columns(path, header, rows, names):
    missing = [n for n in names if n not in header]
    if missing:
        raise ValidationError(f"{path}: header lacks column(s) {missing}; found {header}")
    idx = [header.index(n) for n in names]
    out = []
    for row in rows:
        lineno, cells = row[0], row[1:]
        try:
            out.append([float(cells[i]) for i in idx])
        except (IndexError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad row {cells!r}") from exc
    if not out:
        raise ValidationError(f"{path}: no data rows")
    return np.array(out).T


def load_spectrum(path) -> Spectrum:
    """Read a two-column ``energy_kev,weight`` CSV (header row required)."""
    header, rows, _ = _read_comment_csv(path)
    energy, weight = _columns(path, header, rows, ["energy_kev", "weight"])
    return Spectrum(energy, weight)


def load_material(path, name: str | None = None) -> MaterialTable:
    """Read an ``energy_kev,mass_atten_cm2_per_g`` CSV with a
    ``# density_g_cm3=<v>`` comment line."""
    header, rows, comments = _read_comment_csv(path)
    density = None
    for c in comments:
        key, _, value = c.partition("=")
        if key.strip() == "density_g_cm3":
            density = float(value)
    if density is None:
        raise ValidationError(f"{path}: missing '# density_g_cm3=<v>' line")
    energy, mass = _columns(path, header, rows, ["energy_kev", "mass_atten_cm2_per_g"])
    return MaterialTable(name or Path(path).stem, density, energy, mass)


def _data_path(name: str):
    return resources.files("marforge") / "data" / name


_DEFAULTS: dict = {}


def default_spectrum() -> Spectrum:
    if "spectrum" not in _DEFAULTS:
        with resources.as_file(_data_path("spectrum_120kvp.csv")) as p:
            _DEFAULTS["spectrum"] = load_spectrum(p)
    return _DEFAULTS["spectrum"]


def default_materials() -> Materials:
    if "materials" not in _DEFAULTS:
        tables = {}
        for name in ("water", "bone", "iron"):
            with resources.as_file(_data_path(f"{name}.csv")) as p:
                tables[name] = load_material(p, name)
        _DEFAULTS["materials"] = Materials(**tables)
    return _DEFAULTS["materials"]
