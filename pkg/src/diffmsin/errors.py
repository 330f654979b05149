"""Exception hierarchy shared across the package."""


class DiffMsinError(Exception):
    """Base class for every error raised by diffmsin."""


class DimensionError(DiffMsinError, ValueError):
    pass


class EmptySequenceError(DimensionError):
    pass


class ConfigError(DiffMsinError, ValueError):
    pass


class ContractError(DiffMsinError, RuntimeError):
    """A caller violated an operation's precondition."""


class SingularityError(DiffMsinError, ArithmeticError):
    pass


class IngestionError(DiffMsinError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class UndefinedAUCError(DiffMsinError, ValueError):
    pass


class NumericError(DiffMsinError, ArithmeticError):
    """Raised when a computation produces NaN/Inf or fails a numeric check."""
