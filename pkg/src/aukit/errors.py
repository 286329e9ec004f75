"""Exception types shared across the toolkit."""


class AukitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(AukitError):
    """Tensor shapes are incompatible with the requested operation."""


class DomainError(AukitError):
    """A value lies outside the mathematical domain of an operation."""


class ConfigError(AukitError):
    """Invalid or inconsistent configuration."""


class DataError(AukitError):
    """Dataset is empty or otherwise unusable."""


class IoError(AukitError):
    """Reading or writing an artifact failed."""


class FormatError(AukitError):
    """A file does not conform to its declared format.

    ``offset`` carries the byte offset of the first problem when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(AukitError):
    """A NaN or Inf appeared where finite values are required."""


class InternalInvariantError(AukitError):
    """An internal invariant that should be unreachable was violated."""
