"""Exception hierarchy.

Validation problems map to CLI exit code 2, numerical failures to 3.
"""


class WindcohError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(WindcohError):
    """Input case or scenario violates a structural invariant."""

    exit_code = 2

    def __init__(self, message, findings=()):
        super().__init__(message)
        self.findings = list(findings)


class DomainError(ValidationError, ValueError):
    """Argument outside the domain of a formula (e.g. omega_r <= 0)."""


class NumericalError(WindcohError):
    """A numerical procedure failed."""

    exit_code = 3


class DivergenceError(NumericalError):
    """Iterative solver did not converge."""

    def __init__(self, message, mismatch=float("nan"), iterations=0):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class SingularityError(NumericalError):
    """A matrix that must be inverted is (numerically) singular."""

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class ConditioningError(SingularityError):
    """Inversion-lemma correction is too badly conditioned to trust."""


class EquilibriumError(NumericalError):
    """No wind-farm equilibrium satisfying the residual tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}
