"""Exception types shared across the package."""


class RbmlabError(Exception):
    """Base class for all rbmlab errors."""


class ConfigError(RbmlabError):
    """Malformed or schema-violating configuration input."""


class ValidationError(RbmlabError, ValueError):
    """Arguments that violate a documented precondition."""


class CapacityError(RbmlabError):
    """Exact combinatorial routine invoked above its size guard."""


class DomainError(RbmlabError, ValueError):
    """Numerical input outside the mathematical domain (e.g. a singular
    covariance where a positive-definite one is required)."""


class DivergenceError(RbmlabError, RuntimeError):
    """Trajectory produced non-finite coordinates."""
