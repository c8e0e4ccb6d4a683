"""Exception types shared across the package."""


class ZsdkitError(Exception):
    """Base class for all errors raised deliberately by zsdkit."""


class IngestionError(ZsdkitError):
    """A file could not be parsed; the message names the offending line or record."""


class ValidationError(ZsdkitError):
    """An invariant, precondition, or configuration value was violated."""
