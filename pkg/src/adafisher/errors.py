"""Exception hierarchy shared across the package."""


class AdaFisherError(Exception):
    """Base class for all package errors."""


class DimensionError(AdaFisherError, ValueError):
    """Shapes or dimensions are inconsistent with the operation."""


class InputError(AdaFisherError, ValueError):
    """A value is outside the operation's domain (NaN, bad label, empty batch...)."""


class StateError(AdaFisherError, RuntimeError):
    """Operation called before its required state was populated."""


class ConfigError(AdaFisherError, ValueError):
    """Invalid run configuration or hyperparameter."""


class DataError(AdaFisherError, ValueError):
    """Dataset could not be loaded or parsed."""


class FormatError(DataError):
    """File content does not match the declared on-disk format."""


class NumericError(AdaFisherError, ArithmeticError):
    """Training produced a non-finite value."""


class SizeError(AdaFisherError, ValueError):
    """Problem size exceeds a test-scale guard."""


class UnsupportedError(AdaFisherError, ValueError):
    """The model/loss combination is not supported by this operation."""
