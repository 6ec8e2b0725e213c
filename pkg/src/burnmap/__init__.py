"""Annual burned-area mapping from multi-date surface-reflectance rasters."""

from .errors import (
    BurnMapError,
    DegenerateDenominator,
    DimensionMismatch,
    FormatError,
    NoObservations,
    SamplingInfeasible,
    TrainingError,
    ValidationError,
)

__version__ = "0.1.0"
