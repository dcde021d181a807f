"""Exception hierarchy shared across the package."""


class ExforgeError(Exception):
    """Base class for all package errors."""


class ValidationError(ExforgeError, ValueError):
    pass


class ShapeError(ValidationError):
    pass


class ConfigurationError(ValidationError):
    pass


class DomainError(ValidationError):
    """Oracle input outside the declared ``[-1, 1]^d`` box."""


class BudgetExhausted(ExforgeError):
    """A metered query batch did not fit in the remaining budget."""

    def __init__(self, requested: int, remaining: int):
        super().__init__(f"budget exhausted: requested {requested}, remaining {remaining}")
        self.requested = requested
        self.remaining = remaining


class PolicyError(ExforgeError):
    """White-box diagnostic requested from a strict oracle."""


class TrainingError(ExforgeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
