"""Exceptions and warnings raised by the toolkit."""


class DomainError(ValueError):
    """A state or action lies outside the model's domain."""


class BlowUpError(DomainError):
    """An integrated trajectory left the flow's bounding box."""


class RegimeError(ValueError):
    """An SIR formula was requested outside the regime it is defined for."""


class ModelError(ValueError):
    """The model violates a hard structural requirement."""


class QuadratureError(RuntimeError):
    """A running-cost integral did not meet its tolerance."""


class TailNotNegligibleError(QuadratureError):
    """The infinite-horizon tail of a running-cost integral is not negligible."""


class NonConvergenceError(RuntimeError):
    """Value iteration hit ``max_iter`` before reaching ``tol``.

    The partially converged field and the iteration reports are attached so
    callers can still persist them.
    """

    def __init__(self, message, field=None, reports=None):
        super().__init__(message)
        self.field = field
        self.reports = reports or []


class ConfigError(ValueError):
    """A run configuration is malformed; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class ModelValidationWarning(UserWarning):
    """A sampled model check (positivity, boundedness) failed."""


class NonMonotoneIterationWarning(UserWarning):
    """Successive approximations decreased somewhere by more than the slack."""
