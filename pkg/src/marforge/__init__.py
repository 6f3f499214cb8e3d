"""Metal artifact simulation, normalized metal artifact reduction and
segmentation metrics for CT slices."""

__version__ = "0.1.0"

from .core import (ImageSlice, MaterialTable, Materials, ScanGeometry, SimulationConfig, Sinogram,
                   Spectrum, Unit, ValidationError, Volume, default_materials, default_spectrum,
                   lookup_mass_attenuation, normalize_spectrum, resample_uniform_z)
from .mar import MarConfig, li_mar_inpaint, nmar, nmar_inpaint
from .physics import simulate_artifact
from .projector import FilterKind, back_project, fbp, filter_sinogram, forward_project

__all__ = [
    "FilterKind", "ImageSlice", "MarConfig", "MaterialTable", "Materials", "ScanGeometry",
    "SimulationConfig", "Sinogram", "Spectrum", "Unit", "ValidationError", "Volume",
    "back_project", "default_materials", "default_spectrum", "fbp", "filter_sinogram",
    "forward_project", "li_mar_inpaint", "lookup_mass_attenuation", "nmar", "nmar_inpaint",
    "normalize_spectrum", "resample_uniform_z", "simulate_artifact",
]
