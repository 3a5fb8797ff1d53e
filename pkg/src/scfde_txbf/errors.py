"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid configuration; ``fields`` lists one message per offending field."""

    def __init__(self, message, fields=None):
        super().__init__(message)
        self.fields = list(fields) if fields else [message]


class RankDeficientError(ValueError):
    def __init__(self, message, subcarriers=()):
        super().__init__(message)
        self.subcarriers = list(subcarriers)


class ZeroSinrError(ArithmeticError):
    """A SINR-based criterion met a stream whose normalised MSE is 1."""

    def __init__(self, message, streams=()):
        super().__init__(message)
        self.streams = list(streams)


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
