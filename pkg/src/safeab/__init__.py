"""Anytime-valid A/B testing: safe t and proportion tests, mSPRT and simulations."""

__version__ = "0.1.0"

from .eprocess import EProcess, EValue, Verdict
from .errors import (DegenerateError, DomainError, NotReachableError, SafeABError, SchemaError,
                     ValidationError)

__all__ = [
    "EProcess", "EValue", "Verdict", "SafeABError", "DomainError", "DegenerateError",
    "NotReachableError", "ValidationError", "SchemaError", "__version__",
]
