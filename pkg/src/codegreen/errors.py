"""Exception hierarchy shared across the package."""


class CodeGreenError(Exception):
    """Base class for all errors raised by codegreen."""
