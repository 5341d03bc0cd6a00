"""Exception hierarchy shared by every module."""


class DapoError(Exception):
    """Base class for all library errors."""


class DomainError(DapoError, ValueError):
    """An input lies outside the domain of the requested operation."""


class SingularSystem(DapoError, ArithmeticError):
    """A linear system that should be nonsingular could not be solved."""


class NonConvergence(DapoError, RuntimeError):
    """An iterative solver exhausted its sweep budget."""


class Divergence(DapoError, ArithmeticError):
    """An optimization produced non-finite values."""


class ConfigError(DapoError, ValueError):
    """A configuration value violates its documented invariants."""
