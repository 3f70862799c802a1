"""Exception types shared across the package.

CLI exit-code mapping: usage errors -> 1, data/format errors -> 2,
numerical failures -> 3 (see cli.py).
"""


class GmsegError(Exception):
    """Base class for all package errors."""


class DimensionError(GmsegError):
    """Shapes of interacting arrays disagree."""


class InvalidConfigError(GmsegError):
    """A configuration value is out of its allowed range."""


class ContractError(GmsegError):
    """A documented precondition was violated by the caller."""


class UnsupportedFormatError(GmsegError):
    """File exists but uses a format/datatype outside the supported subset."""


class SchemaError(GmsegError):
    """A sidecar/config file is missing a required field."""


class IntegrityError(GmsegError):
    """A serialized file is truncated or corrupted."""


class DegenerateInputError(GmsegError):
    """Input is structurally valid but numerically degenerate (e.g. zero variance)."""


class NumericsError(GmsegError):
    """NaN/Inf encountered where finite values are required."""
