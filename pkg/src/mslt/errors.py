"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors -> 2,
I/O errors -> 3, contract violations -> 4.
"""


class MsltError(Exception):
    """Base class for all package errors."""


class DimensionError(MsltError):
    """Operands have incompatible shapes or channel counts."""


class SizeError(MsltError):
    """An image is too small for the requested operation."""


class ContractViolation(MsltError):
    """A documented precondition was violated (bad value range, stale trace, ...)."""


class WeightFormatError(MsltError):
    """A weight file is corrupt, truncated, or belongs to a different variant."""
