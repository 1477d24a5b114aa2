"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when input data violates a documented precondition."""


class ConfigurationError(ValueError):
    """Raised when a config value is out of range or inconsistent."""


class NumericError(ArithmeticError):
    """Raised when a computation produces NaN or infinity."""
