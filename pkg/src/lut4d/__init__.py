"""Spatially adaptive 4D look-up tables for color transformation."""

from .context import generate_context, luminance_context
from .errors import (BadMagicError, DataError, DimensionError, FormatError, Lut4DError,
                     MissingParameterError, NumericError, TruncatedError)
from .lut import (BasisLutBank, Lut3D, Lut4D, apply_lut3d, apply_lut4d, fuse_luts,
                  make_identity_lut3d, make_identity_lut4d, quad_interp, quad_interp_points)

__version__ = "0.1.0"

__all__ = [
    "BadMagicError", "BasisLutBank", "DataError", "DimensionError", "FormatError",
    "Lut3D", "Lut4D", "Lut4DError", "MissingParameterError", "NumericError",
    "TruncatedError", "apply_lut3d", "apply_lut4d", "fuse_luts", "generate_context",
    "luminance_context", "make_identity_lut3d", "make_identity_lut4d", "quad_interp",
    "quad_interp_points",
]
