"""zsdkit: semantics-conditioned feature synthesis and zero-shot detection evaluation."""

from .errors import IngestionError, ValidationError, ZsdkitError

__all__ = ["IngestionError", "ValidationError", "ZsdkitError"]
__version__ = "0.1.0"
