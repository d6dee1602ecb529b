"""Face-mask presentation attack detection.

Pipeline: intrinsic decomposition of each frame into shading and reflectance,
intensity histograms of the reflectance sequence on three orthogonal planes,
one temporal 1-D CNN per plane as feature extractor, and a linear SVM.
"""

from .errors import (
    DimensionError,
    FormatError,
    IipadError,
    InputError,
    InsufficientDataError,
    InvalidArgumentError,
    InvalidStateError,
    TrainingDivergedError,
)

__version__ = "0.1.0"

__all__ = [
    "DimensionError",
    "FormatError",
    "IipadError",
    "InputError",
    "InsufficientDataError",
    "InvalidArgumentError",
    "InvalidStateError",
    "TrainingDivergedError",
    "__version__",
]
