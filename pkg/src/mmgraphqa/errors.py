"""Exception types shared across the package.

CLI exit codes: 0 ok, 1 validation failure, 2 numeric failure, 3 I/O.
"""


class ValidationError(Exception):
    """Structural input or graph-invariant violation."""


class NumericError(Exception):
    """Non-finite value or failed gradient check."""


class FormatError(Exception):
    """Malformed on-disk data (carries file/line context in the message)."""
