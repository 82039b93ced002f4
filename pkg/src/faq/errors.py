"""Exception types shared across the package."""


class FaqError(Exception):
    """Base class for all package-specific errors."""


class MatrixParseError(FaqError):
    """A cell token in an outcome CSV could not be interpreted."""


class DimensionError(FaqError):
    """Shapes are inconsistent (ragged rows, empty files, mismatched factors)."""


class DataError(FaqError):
    """The data content violates a precondition (e.g. no observed entries)."""


class NumericalError(FaqError):
    """A numerical routine produced a non-finite or non-SPD result."""


class FoldError(FaqError):
    """A cross-validation fold ended up with no holdout entries."""
