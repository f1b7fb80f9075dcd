"""Exception hierarchy shared across the package.

Each branch maps onto one CLI exit code (see ``spekt.cli``): usage errors
are handled by argparse itself, configuration problems raise
``ConfigError``, anything wrong with files or stored payloads raises a
``DataError`` subclass, and numerical failures raise ``NumericalError``.
"""


class SpektError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SpektError):
    """Invalid parameter combination or inconsistent configuration."""


class DimensionError(SpektError, ValueError):
    """Shape / length mismatch between operands."""


class DataError(SpektError):
    """File or payload level problem (I/O, format, corruption)."""


class BadMagicError(DataError):
    """File does not start with the expected magic bytes."""


class CrcMismatchError(DataError):
    """Stored checksum does not match the payload."""


class FormatVersionError(DataError):
    """File version is newer than this reader understands."""


class NumericalError(SpektError):
    """Numerical failure: singular system, divergence, non-finite values."""


class SingularMatrixError(NumericalError):
    """Normal equations are singular; regularization required."""


class TrainingDivergedError(NumericalError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")
