"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`OtarError`,
so callers (the CLI in particular) can map them to exit codes.
"""


class OtarError(Exception):
    """Base class for all package errors."""


class DomainError(OtarError, ValueError):
    """An argument lies outside the admissible range of an operation."""


class DegenerateMapError(OtarError, ValueError):
    """A map is not strictly increasing (flat or decreasing segment)."""


class ConfigError(OtarError, ValueError):
    """Inconsistent or missing configuration."""


class InputError(OtarError, ValueError):
    """Malformed or insufficient input data."""


class NotDifferentiableError(OtarError, ValueError):
    """Derivative requested at a point where the objective has a branch switch."""
