"""Generated-image detection from real photos only.

Noise residual -> DFT amplitude -> row-mean enhancement -> grid sampling ->
one-class SVM. See the ``realonly`` command for the end-to-end tools.
"""
from .imagio import Raster, load_image, save_image
from .noise import ExtractorSpec, extract_residual
from .ocsvm import OcSvmConfig, OcSvmModel, train
from .pipeline import Manifest, PipelineConfig
from .spectrum import Spectrum, residual_features

__version__ = "0.1.0"

__all__ = [
    "ExtractorSpec", "Manifest", "OcSvmConfig", "OcSvmModel", "PipelineConfig", "Raster",
    "Spectrum", "extract_residual", "load_image", "residual_features", "save_image", "train",
]
