"""Exception types shared across the package.

Every error raised on a contract violation derives from ImpulseLorenzError so
callers can catch the package's failures without also swallowing unrelated
ValueErrors from numpy or scipy.
"""
from __future__ import annotations


class ImpulseLorenzError(Exception):
    """Base class for all package-specific errors."""


class DomainError(ImpulseLorenzError):
    """Input outside the documented domain of an operation."""


class StiffnessError(ImpulseLorenzError):
    """Adaptive integrator drove the step size below the representable floor."""


class OrbitCapturedError(ImpulseLorenzError):
    """No section crossing occurred before the configured time horizon."""


class DivergenceError(ImpulseLorenzError):
    """Trajectory left the bounded region where the model is meaningful."""


class DegenerateEquilibriumError(ImpulseLorenzError):
    """Linearization at the equilibrium is not a real hyperbolic saddle."""


class CalibrationError(ImpulseLorenzError):
    """Section calibration data missing, inconsistent, or out of range."""


class OutOfFoliationError(CalibrationError):
    """Point's leaf coordinate falls outside the calibrated leaf range."""


class InvalidPerturbationError(ImpulseLorenzError):
    """Perturbed map family violates its structural preconditions."""


class UnreliableFitError(ImpulseLorenzError):
    """Empirical fit rejected: too many samples dropped or inconsistent."""


class ConvergenceError(ImpulseLorenzError):
    """Iterative procedure failed to reach its tolerance within its budget."""


class ConfigError(ImpulseLorenzError):
    """Experiment configuration failed schema validation.

    Carries enough location detail to point the user at the offending line.
    """

    def __init__(self, message: str, *, table: str = "", key: str = ""):
        super().__init__(message)
        self.table = table
        self.key = key
