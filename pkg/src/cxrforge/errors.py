from __future__ import annotations

from .nifti import NiftiFormatError


class ForgeError(Exception):
    """Base class for cxrforge errors."""


class FormatError(ForgeError, NiftiFormatError):
    pass


class DataError(ForgeError, ValueError):
    pass


class ParameterError(ForgeError, ValueError):
    pass


class ShapeError(ForgeError, ValueError):
    pass


class TaxonomyError(ForgeError, KeyError):
    pass


class ConfigurationError(ForgeError, ValueError):
    pass


class GeometryError(ForgeError, ValueError):
    pass


class MeasurementError(ForgeError, ValueError):
    pass


class InsufficientDataError(MeasurementError):
    pass


class UndefinedLossError(ForgeError, ValueError):
    """Raised when no (sample, class) pair is available for supervision."""


class NumericError(ForgeError, ArithmeticError):
    pass
