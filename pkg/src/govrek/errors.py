"""Exception hierarchy shared across the package."""


class GovRekError(Exception):
    """Base class for all package errors."""


class InvalidInput(GovRekError, ValueError):
    pass


class DomainMismatch(GovRekError, ValueError):
    pass


class MissingContext(GovRekError, ValueError):
    pass


class DegenerateField(GovRekError, ArithmeticError):
    pass


class LayoutInfeasible(GovRekError, RuntimeError):
    pass


class EpisodeFinished(GovRekError, RuntimeError):
    pass


class Overflow(GovRekError, OverflowError):
    pass


class CapacityExceeded(GovRekError, MemoryError):
    pass


class InvalidBudget(GovRekError, ValueError):
    pass


class BracketExhausted(GovRekError, RuntimeError):
    pass


class ConfigError(GovRekError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class AlignmentError(GovRekError, ValueError):
    pass


class MissingRun(GovRekError, FileNotFoundError):
    pass
