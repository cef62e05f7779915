"""Exception hierarchy shared by every module."""


class SpikeInitError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SpikeInitError, ValueError):
    """Invalid parameters or an inconsistent configuration."""


class NumericalError(SpikeInitError, ArithmeticError):
    """A numerical procedure failed to converge or produced non-finite output."""
