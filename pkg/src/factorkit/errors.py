"""Exception types raised by factorkit."""


class FactorKitError(Exception):
    """Base class for all factorkit errors."""


class ValidationError(FactorKitError, ValueError):
    """Input data or arguments violate a documented precondition."""


class ParseError(ValidationError):
    """A panel file could not be parsed."""


class DomainError(ValidationError):
    """A transform was applied outside its mathematical domain (e.g. log of a nonpositive value)."""


class PreconditionError(ValidationError):
    """An operation was called on data that is not in the required state."""


class LinearSolveError(FactorKitError, ArithmeticError):
    """A linear system that must be solved is singular."""
