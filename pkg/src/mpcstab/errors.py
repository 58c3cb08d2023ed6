"""Exception types shared across the package."""


class MPCError(Exception):
    """Base class for every error raised by mpcstab."""


class ShapeError(MPCError, ValueError):
    """Vector or matrix dimensions do not match."""


class DomainError(MPCError, ValueError):
    """A tabulated model was evaluated outside its stated domain."""


class ConfigError(MPCError, ValueError):
    """Invalid weights, sets or scenario configuration.

    ``line`` and ``column`` are 1-based and filled in when the error comes
    from a parsed scenario file.
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            message = f"{where}: {message}"
        super().__init__(message)


class ArgumentError(MPCError, ValueError):
    """An argument is outside the accepted range."""


class SingularityError(MPCError, ArithmeticError):
    """A matrix that must be inverted is singular."""


class BudgetError(MPCError, RuntimeError):
    """An enumeration would exceed its combinatorial budget."""


class UnsupportedError(MPCError, NotImplementedError):
    """Requested operation is outside the supported dimensions."""
