"""Exception types shared across the package."""


class TransKDError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(TransKDError, ValueError):
    """Inputs whose dimensions do not line up (labels vs lattice, student vs teacher, ...)."""


class NormalizationError(TransKDError, ValueError):
    """A lattice row or probability vector that does not sum to one within tolerance."""


class EnumerationLimitError(TransKDError, ValueError):
    """A brute-force oracle asked to enumerate more paths than the guard allows."""


class ConfigError(TransKDError, ValueError):
    """Bad, missing, or unknown configuration keys/values."""


class ArchiveError(TransKDError, IOError):
    """Base class for binary container read/write failures."""


class BadMagicError(ArchiveError):
    """File does not start with the expected magic bytes."""


class VersionError(ArchiveError):
    """File carries an unsupported container version."""


class TruncatedArchiveError(ArchiveError):
    """File ended in the middle of a record; carries the failing record index."""

    def __init__(self, record_index: int, message: str):
        super().__init__(message)
        self.record_index = record_index


class DimensionError(ArchiveError):
    """Record dimensions inconsistent with the archive header."""
