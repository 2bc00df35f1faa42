"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage errors exit 1, data
errors exit 2, numeric failures exit 3.
"""


class PatchCPCError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(PatchCPCError, ValueError):
    """An argument violates a documented precondition."""


class GeometryError(PatchCPCError, ValueError):
    """Shapes or grid geometry do not line up."""


class ConfigurationError(PatchCPCError, ValueError):
    """A configuration object is internally inconsistent or mismatched."""


class DataError(PatchCPCError):
    """Base class for dataset ingestion problems."""


class IngestionError(DataError):
    """A dataset source is missing or unreadable."""


class FormatError(DataError):
    """A dataset source exists but has the wrong layout or dtype."""


class NumericError(PatchCPCError, ArithmeticError):
    """A numeric computation produced non-finite or unusable values."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss.

    Carries the last checkpoint that was still finite so callers can
    recover it.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
