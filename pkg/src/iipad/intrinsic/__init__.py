"""Shading/reflectance decomposition built on a steerable pyramid."""

from .decompose import (
    BandStatistics,
    IntrinsicPair,
    compute_band_statistics,
    decompose,
    decompose_sequence,
    dump_debug,
    optimize_dc,
    reconstruct_shading_reflectance,
)
from .pyramid import Pyramid, build_pyramid, collapse_pyramid

__all__ = [
    "BandStatistics",
    "IntrinsicPair",
    "Pyramid",
    "build_pyramid",
    "collapse_pyramid",
    "compute_band_statistics",
    "decompose",
    "decompose_sequence",
    "dump_debug",
    "optimize_dc",
    "reconstruct_shading_reflectance",
]
