"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: validation-type errors exit 2,
numerical failures exit 3, training divergence exits 4.
"""


class ValidationError(ValueError):
    """Bad arguments: malformed marginals, mismatched dims, unknown keys."""


class ShapeError(ValidationError):
    """Array shape disagrees with a model or operation contract."""


class DomainError(ValidationError):
    """Input outside the mathematical domain (non-PSD matrix, zero-norm row)."""


class CapacityError(ValidationError):
    """Problem size exceeds a documented solver limit."""


class NumericalError(RuntimeError):
    """Non-finite values or loss of precision during a computation."""


class DivergenceError(RuntimeError):
    """A training loop blew past the divergence guard."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
