"""Load SimulationConfig / MarConfig from JSON or TOML documents.

Top-level keys mirror :class:`~marforge.core.SimulationConfig` fields;
``spectrum`` is a CSV path, ``materials`` a table of CSV paths keyed by
material and ``geometry`` a table with ``n_views``, ``n_detectors`` and
``detector_spacing``. MarConfig fields live under ``[mar]``. Relative paths
resolve against the document's directory.
"""
from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import tomli

from .core import (Materials, ScanGeometry, SimulationConfig, ValidationError, default_materials,
                   load_material, load_spectrum)
from .mar import MarConfig

_SIM_FIELDS = {f.name for f in dataclasses.fields(SimulationConfig)}
_MAR_FIELDS = {f.name for f in dataclasses.fields(MarConfig)}


def load_document(path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            doc = tomli.loads(text.decode("utf-8"))
        else:
            doc = json.loads(text.decode("utf-8"))
    except (tomli.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: top level must be a table/object")
    doc["_base_dir"] = str(path.parent)
    return doc


def _resolve(base: str | None, p: str) -> Path:
    p = Path(p)
    return p if p.is_absolute() or base is None else Path(base) / p


def simulation_config(doc: dict | None = None, **overrides) -> SimulationConfig:
    """Layer defaults < ``doc`` < ``overrides`` (None-valued overrides are ignored)."""
    doc = dict(doc or {})
    base = doc.pop("_base_dir", None)
    doc.pop("mar", None)
    unknown = set(doc) - _SIM_FIELDS
    if unknown:
        raise ValidationError(f"unknown simulation config key(s): {sorted(unknown)}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for key, value in doc.items():
        if key == "spectrum" and isinstance(value, (str, Path)):
            value = load_spectrum(_resolve(base, value))
        elif key == "materials" and isinstance(value, dict):
            defaults = default_materials()
            tables = {name: getattr(defaults, name) for name in ("water", "bone", "iron")}
            for name, p in value.items():
                if name not in tables:
                    raise ValidationError(f"unknown material {name!r}")
                tables[name] = load_material(_resolve(base, p), name)
            value = Materials(**tables)
        elif key == "geometry" and isinstance(value, dict):
            value = ScanGeometry(int(value["n_views"]), int(value["n_detectors"]),
                                 float(value["detector_spacing"]))
        kwargs[key] = value
    return SimulationConfig(**kwargs)


def mar_config(doc: dict | None = None, **overrides) -> MarConfig:
    section = dict((doc or {}).get("mar", {}))
    unknown = set(section) - _MAR_FIELDS
    if unknown:
        raise ValidationError(f"unknown mar config key(s): {sorted(unknown)}")
    section.update({k: v for k, v in overrides.items() if v is not None})
    return MarConfig(**section)


def describe_simulation(cfg: SimulationConfig, sources: dict | None = None) -> dict:
    """JSON-ready view of a config with every default materialized."""
    sources = sources or {}
    out = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    out["spectrum"] = sources.get("spectrum", "bundled:spectrum_120kvp.csv")
    out["materials"] = sources.get("materials", {n: f"bundled:{n}.csv" for n in ("water", "bone", "iron")})
    if cfg.geometry is not None:
        out["geometry"] = dataclasses.asdict(cfg.geometry)
    out["seed"] = int(cfg.seed)
    return out


def describe_mar(cfg: MarConfig) -> dict:
    return dataclasses.asdict(cfg)
