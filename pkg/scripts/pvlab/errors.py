"""
errors.py - pvlab
Exception hierarchy shared by every module. The runner maps these onto exit codes.
"""


class PVLabError(Exception):
    """Base class for every error raised by pvlab."""


class ArgumentError(PVLabError, ValueError):
    """A precondition on an argument was violated."""


class FormatError(PVLabError, ValueError):
    """Malformed image or tensor file. `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ConditioningError(ArgumentError):
    """Gram/covariance matrix too ill-conditioned to factor without a ridge."""

    def __init__(self, message: str, eigenvalue: float):
        super().__init__(f"{message} (smallest eigenvalue {eigenvalue:.3e})")
        self.eigenvalue = eigenvalue


class ResourceError(PVLabError):
    """A problem exceeded a hard size bound."""


class TrainingError(PVLabError):
    """Stochastic training diverged. `trace` holds the per-epoch losses seen so far."""

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = list(trace)


class ConfigError(PVLabError):
    """Invalid experiment configuration."""

