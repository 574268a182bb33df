"""Exception hierarchy shared by all modules."""


class OffsetFreeError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(OffsetFreeError, ValueError):
    """Array shapes do not match what the callee expects."""


class NonFiniteError(OffsetFreeError, FloatingPointError):
    """A NaN or infinity appeared in a computation."""


class DomainError(OffsetFreeError, ValueError):
    """An argument lies outside the physical domain of a model."""


class UnsupportedPrimitiveError(OffsetFreeError, TypeError):
    """An operation outside the closed autodiff primitive set was used."""


class UnsupportedFamilyError(OffsetFreeError, ValueError):
    """The operation is not defined for this disturbance model family."""


class FilterDivergenceError(OffsetFreeError):
    """The EKF innovation covariance became numerically singular."""


class InfeasibleReferenceError(OffsetFreeError):
    """The reference generator could not satisfy the model constraints.

    Attributes
    ----------
    residual : float
        Best constraint residual reached before giving up.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NoSteadyStateError(InfeasibleReferenceError):
    """Newton's method on the steady-state equations did not converge."""


class SolverFailure(OffsetFreeError):
    """The SQP iteration hit its iteration limit.

    Attributes
    ----------
    best : object
        Best iterate found (an ``NmpcSolution``).
    residual : float
        KKT residual of ``best``.
    """

    def __init__(self, message, best=None, residual=float("nan")):
        super().__init__(message)
        self.best = best
        self.residual = residual


class InfeasibleProblemError(SolverFailure):
    """The linearized constraints of the NMPC problem are inconsistent."""


class ClosedLoopError(OffsetFreeError):
    """A component failed during a closed-loop run.

    Attributes
    ----------
    step : int
        Sample index at which the failure happened.
    component : str
        Name of the failing component (``"ekf"``, ``"refgen"``, ...).
    """

    def __init__(self, step, component, cause):
        super().__init__(f"step {step}: {component} failed: {cause}")
        self.step = step
        self.component = component
        self.cause = cause


class ConfigError(OffsetFreeError, ValueError):
    """Malformed or incomplete scenario config."""


class EmptyLogError(OffsetFreeError, ValueError):
    """Metrics were requested for a log with no records."""
