"""Exception types raised by the lab services."""


class QueueLabError(Exception):
    """Base class for all lab errors."""


class ConfigError(QueueLabError, ValueError):
    """Invalid parameters or scenario configuration."""


class NoOscillatoryRegimeError(QueueLabError, ValueError):
    """The parameters admit no Hopf instability (no critical delay exists)."""


class NumericalFailureError(QueueLabError, ArithmeticError):
    """A trajectory left the finite numbers during integration."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class BracketError(QueueLabError, ValueError):
    """Scan endpoints do not straddle a Converging/Oscillating transition."""


class SignAmbiguityError(QueueLabError, ValueError):
    """The stable side of the moving-average detuning could not be identified."""

    def __init__(self, message: str, patterns: dict[str, list[str]] | None = None):
        super().__init__(message)
        self.patterns = patterns or {}
