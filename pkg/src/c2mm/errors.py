"""Exception hierarchy shared by all modules.

Each exception carries the CLI exit code it maps to.
"""


class C2MMError(Exception):
    """Base class for library errors."""

    exit_code = 1


class ValidationError(C2MMError, ValueError):
    """Invalid input: bad parameters, malformed files, violated invariants."""

    exit_code = 2


class DomainError(ValidationError):
    """Argument outside the domain of a special function or branch."""


class ToleranceError(C2MMError, ArithmeticError):
    """A numerical tolerance could not be met."""

    exit_code = 3


class ConditioningAlarm(C2MMError, ArithmeticError):
    """Linear algebra too ill-conditioned for the working precision."""

    exit_code = 4
