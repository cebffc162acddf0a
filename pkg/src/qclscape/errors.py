"""Exception types shared across the package.

The CLI maps these onto exit codes, so every user-facing failure should
raise one of them (or a builtin ``IndexError``/``OSError``).
"""


class ConfigurationError(ValueError):
    """Invalid configuration value (unknown layout, bad ratio, empty grid...)."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ShapeError(ValueError):
    """Array length or shape does not match what the circuit expects."""


class DegeneracyError(ValueError):
    """Geometric construction failed because the inputs are (nearly) collinear."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NumericalError(ArithmeticError):
    """A linear solve or other numerical routine failed."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition
