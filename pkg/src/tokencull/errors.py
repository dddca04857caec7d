"""Exception types shared across the package."""


class TokencullError(Exception):
    """Base class for all package errors."""


class ShapeError(TokencullError):
    """Array shape or index contract violated."""


class ConfigError(TokencullError):
    """Invalid configuration (indivisible dimensions, bad ranges, ...)."""


class NumericsError(TokencullError):
    """A primitive produced or received non-finite values."""


class DivergenceError(TokencullError):
    """Training loss became non-finite.

    Carries the last few per-step records so the failure can be diagnosed
    without re-running.
    """

    def __init__(self, message: str, recent_records=None):
        super().__init__(message)
        self.recent_records = list(recent_records or [])
