"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented exit statuses without a lookup table.
"""


class BurnMapError(Exception):
    exit_code = 4


class FormatError(BurnMapError):
    """Malformed input file (raster, manifest, sample table, model JSON)."""

    exit_code = 3


class ValidationError(BurnMapError, ValueError):
    """An argument or object violates a documented invariant."""

    exit_code = 4


class DegenerateDenominator(BurnMapError, ArithmeticError):
    """A spectral index is singular for the given reflectances."""


class TrainingError(BurnMapError):
    pass


class NoObservations(BurnMapError):
    pass


class DimensionMismatch(ValidationError):
    pass


class SamplingInfeasible(BurnMapError):
    def __init__(self, message, stratum=None):
        super().__init__(message)
        self.stratum = stratum
