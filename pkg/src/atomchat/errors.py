"""Shared exception types; the CLI maps them onto exit codes."""


class ContractError(ValueError):
    """An operation was called outside its documented contract."""


class GraphError(ContractError):
    """Operands cannot be combined into a computation-graph node."""


class NumericError(ArithmeticError):
    """A computation produced NaN or infinity where finite values are required."""


class FormatError(ValueError):
    """A persisted artifact is malformed or carries the wrong format version."""


class ParseError(FormatError):
    """A text artifact failed to parse; carries the offending line number."""

    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SpecError(ContractError):
    """A synthetic corpus request is infeasible as specified."""


class UsageError(ValueError):
    """Bad command-line argument or configuration input."""
