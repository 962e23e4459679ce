"""Exception hierarchy shared by every fastlsu module.

The CLI maps these onto exit codes: ``ValidationError`` -> 2,
``SourceError`` -> 3, ``InvariantError`` -> 4.
"""


class FastLSUError(Exception):
    """Base class for all fastlsu errors."""


class ValidationError(FastLSUError, ValueError):
    """Invalid user input: a bad p-value, level, manifest or parameter."""

    def __init__(self, message, position=None, line=None):
        self.position = position
        self.line = line
        where = []
        if position is not None:
            where.append(f"position {position}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ConsistencyError(ValidationError):
    """Declared sizes disagree with what a stream actually delivered."""


class SourceError(FastLSUError, OSError):
    """A p-value source could not be opened, read or written."""


class InvariantError(FastLSUError, AssertionError):
    """An internal invariant was violated. Always a defect, never user error."""


class BudgetExceeded(InvariantError):
    """The working-set tracker saw more resident items than the budget allows."""
