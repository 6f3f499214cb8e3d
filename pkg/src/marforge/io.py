"""File formats: MetaImage volumes, raw+JSON sinograms, windowed PNG slices.

MetaImage files are a text header (``.mhd``) next to a raw payload. The
writer emits ``MET_FLOAT`` little-endian only; the reader additionally
accepts the common integer and double element types. Headers with
``NDims = 2`` load as single-slice volumes.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import ScanGeometry, Sinogram, Unit, Volume


class FormatError(ValueError):
    """Malformed or inconsistent file contents."""


MET_TYPES = {
    "MET_FLOAT": "f4", "MET_DOUBLE": "f8", "MET_UCHAR": "u1", "MET_CHAR": "i1",
    "MET_USHORT": "u2", "MET_SHORT": "i2", "MET_UINT": "u4", "MET_INT": "i4",
}


@dataclass(frozen=True)
class VolumeHeader:
    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    element_type: str
    data_file: str
    unit: Unit = Unit.HU
    big_endian: bool = False

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(MET_TYPES[self.element_type]).newbyteorder(">" if self.big_endian else "<")

    @property
    def n_bytes(self) -> int:
        return int(np.prod(self.dims)) * self.dtype.itemsize


def _parse_header(path: Path) -> VolumeHeader:
    raw = path.read_bytes()
    fields: dict[str, tuple[str, int]] = {}
    offset = 0
    for line in raw.splitlines(keepends=True):
        text = line.decode("utf-8", errors="replace").strip()
        if text:
            key, sep, value = text.partition("=")
            if not sep:
                raise FormatError(f"{path}: byte {offset}: expected 'Key = Value', got {text!r}")
            fields[key.strip()] = (value.strip(), offset)
        offset += len(line)

    def get(key, required=True):
        if key not in fields:
            if required:
                raise FormatError(f"{path}: missing required key {key!r}")
            return None, None
        return fields[key]

    def numbers(key, cast):
        value, off = get(key)
        try:
            return tuple(cast(v) for v in value.split())
        except ValueError:
            raise FormatError(f"{path}: byte {off}: bad {key} value {value!r}") from None

    ndims_s, off = get("NDims")
    try:
        ndims = int(ndims_s)
    except ValueError:
        raise FormatError(f"{path}: byte {off}: bad NDims {ndims_s!r}") from None
    if ndims not in (2, 3):
        raise FormatError(f"{path}: byte {off}: NDims must be 2 or 3, got {ndims}")
    dims = numbers("DimSize", int)
    spacing = numbers("ElementSpacing", float) if "ElementSpacing" in fields else (1.0,) * ndims
    if len(dims) != ndims or min(dims) < 1:
        raise FormatError(f"{path}: byte {fields['DimSize'][1]}: DimSize {dims} inconsistent with NDims={ndims}")
    if len(spacing) != ndims or min(spacing) <= 0:
        raise FormatError(f"{path}: ElementSpacing {spacing} must hold {ndims} positive values")
    etype, off = get("ElementType")
    if etype not in MET_TYPES:
        raise FormatError(f"{path}: byte {off}: unknown ElementType {etype!r}")
    msb, _ = get("ElementByteOrderMSB", required=False)
    if msb is None:
        msb, _ = get("BinaryDataByteOrderMSB", required=False)
    big = str(msb).lower() == "true"
    data_file, off = get("ElementDataFile")
    if data_file.upper() in ("LOCAL", "LIST") or "%" in data_file:
        raise FormatError(f"{path}: byte {off}: ElementDataFile {data_file!r} not supported")
    unit_s, off = get("Unit", required=False)
    try:
        unit = Unit(unit_s) if unit_s else Unit.HU
    except ValueError:
        raise FormatError(f"{path}: byte {off}: unknown Unit {unit_s!r}") from None
    return VolumeHeader(dims, spacing, etype, data_file, unit, big)


def read_volume(path) -> Volume:
    path = Path(path)
    header = _parse_header(path)
    data_path = path.parent / header.data_file
    if not data_path.exists():
        raise FormatError(f"{path}: data file {data_path} not found")
    actual = data_path.stat().st_size
    if actual != header.n_bytes:
        raise FormatError(f"{data_path}: size mismatch, expected {header.n_bytes} bytes "
                          f"({'x'.join(map(str, header.dims))} x {header.dtype.itemsize}), got {actual}")
    data = np.fromfile(data_path, dtype=header.dtype)
    dims = header.dims
    spacing = header.spacing
    if len(dims) == 2:
        dims = (*dims, 1)
        spacing = (*spacing, 1.0)
    values = data.reshape(dims[::-1])
    return Volume(values.astype(values.dtype.newbyteorder("=")), spacing, header.unit)


def write_volume(vol: Volume, path) -> Path:
    """Write ``path`` (``.mhd``) plus a sibling ``.raw``. Values are stored
    as 32-bit float, so float64 input is rounded to float32."""
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        f"DimSize = {nx} {ny} {nz}\n"
        f"ElementSpacing = {sx!r} {sy!r} {sz!r}\n"
        "ElementType = MET_FLOAT\n"
        "ElementByteOrderMSB = False\n"
        f"Unit = {vol.unit.value}\n"
        f"ElementDataFile = {raw_path.name}\n"
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(vol.values, dtype="<f4").tofile(raw_path)
    path.write_text(header, encoding="utf-8")
    return path


def write_sinogram(s: Sinogram, path) -> Path:
    """Write a JSON sidecar at ``path`` and the float32 grid beside it."""
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    g = s.geometry
    meta = {
        "n_views": g.n_views,
        "n_detectors": g.n_detectors,
        "detector_spacing_mm": g.detector_spacing,
        "element_type": "float32-le",
        "data_file": raw_path.name,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(s.values, dtype="<f4").tofile(raw_path)
    path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path


def read_sinogram(path) -> Sinogram:
    path = Path(path)
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: byte {exc.pos}: invalid JSON ({exc.msg})") from None
    try:
        geom = ScanGeometry(int(meta["n_views"]), int(meta["n_detectors"]),
                            float(meta["detector_spacing_mm"]))
    except KeyError as exc:
        raise FormatError(f"{path}: sidecar missing key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if meta.get("element_type", "float32-le") != "float32-le":
        raise FormatError(f"{path}: unsupported element_type {meta['element_type']!r}")
    raw_path = path.parent / meta.get("data_file", path.with_suffix(".raw").name)
    if not raw_path.exists():
        raise FormatError(f"{path}: data file {raw_path} not found")
    expected = geom.n_views * geom.n_detectors * 4
    actual = raw_path.stat().st_size
    if actual != expected:
        raise FormatError(f"{raw_path}: size mismatch, expected {expected} bytes "
                          f"({geom.n_views}x{geom.n_detectors} x 4), got {actual}")
    values = np.fromfile(raw_path, dtype="<f4").reshape(geom.n_views, geom.n_detectors)
    return Sinogram(geom, values.astype(np.float64))


@dataclass(frozen=True)
class RenderConfig:
    window_low: float = -150.0
    window_high: float = 350.0

    def __post_init__(self):
        if not self.window_low < self.window_high:
            raise ValueError(f"window_low must be < window_high, got {self.window_low}, {self.window_high}")


def window_to_8bit(img, cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Map [low, high] HU linearly to [0, 255], clamping outside; ties round to even."""
    img = np.asarray(img, dtype=np.float64)
    scaled = np.clip((img - cfg.window_low) / (cfg.window_high - cfg.window_low), 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8)


def export_slice_png(vol: Volume, index: int, path, cfg: RenderConfig = RenderConfig()) -> Path:
    nz = vol.values.shape[0]
    if not 0 <= index < nz:
        raise IndexError(f"slice index {index} out of range for {nz} slices")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(window_to_8bit(vol.values[index], cfg)).save(path, format="PNG")
    return path


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return path
