"""Exception hierarchy shared across the package."""


class SafeABError(Exception):
    """Base class for every error raised by safeab."""


class DomainError(SafeABError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateError(SafeABError, ValueError):
    """The data make a statistic undefined (e.g. zero pooled variance)."""


class NotReachableError(SafeABError):
    """A design target cannot be met below the configured search cap."""


class ValidationError(SafeABError, ValueError):
    """Input records violate a schema or invariant.

    ``problems`` holds ``(row_number, message)`` pairs; row numbers are
    1-based and count the header as row 1.
    """

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


class SchemaError(SafeABError, ValueError):
    """A persisted state document is corrupted or has the wrong schema version."""
