"""Exception types shared across the package."""


class ZsdvcError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(ZsdvcError, ValueError):
    pass


class ShapeError(ZsdvcError, ValueError):
    pass


class FormatError(ZsdvcError, ValueError):
    """Unparseable or invalid input file. ``where`` names the offending field."""

    def __init__(self, message, where=None):
        self.where = where
        if where:
            message = f"{where}: {message}"
        super().__init__(message)


class CacheError(FormatError):
    pass


class TruncatedCacheError(CacheError):
    def __init__(self, expected, actual, where=None):
        self.expected = expected
        self.actual = actual
        super().__init__(f"truncated payload: expected {expected} bytes, got {actual}", where)


class ScorerMismatchError(CacheError):
    pass


class SnapshotVersionError(ZsdvcError):
    pass


class NonFiniteLossError(ZsdvcError, FloatingPointError):
    pass


class RunError(ZsdvcError, RuntimeError):
    """A run failed part-way; carries where it stopped and what it had produced."""

    def __init__(self, message, iteration=None, step=None, partial=None):
        self.iteration = iteration
        self.step = step
        self.partial = partial
        super().__init__(f"{message} (iteration={iteration}, step={step})")
