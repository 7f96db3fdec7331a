"""Exception types shared across the package."""


class NarfcsError(Exception):
    """Base class for all errors raised by this package."""


class DataError(NarfcsError):
    """Malformed or inconsistent input data."""


class MaskedReadError(DataError):
    """A masked (missing) cell was read without an imputed value."""


class ConfigError(NarfcsError):
    """Invalid imputation spec or run configuration."""


class UmsParseError(ConfigError, ValueError):
    """Malformed delta-adjustment expression."""


class NumericalError(NarfcsError):
    """A numerical routine failed."""


class SingularDesignError(NumericalError):
    """Normal equations are singular at the requested ridge."""


class ImputationError(NumericalError):
    """A univariate imputation step failed inside a chain."""


class CalibrationError(NumericalError):
    """Sensitivity-parameter calibration did not succeed."""
