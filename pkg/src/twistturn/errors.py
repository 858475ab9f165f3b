"""Exception types shared across the solvers and the CLI harness."""


class SimulationError(Exception):
    """Base class for numerical failures raised by the solvers."""


class ConvergenceError(SimulationError):
    """Iterative solver exhausted its iteration budget.

    Carries the last residual so callers can decide whether to retry
    with a looser tolerance.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class IntegrationError(SimulationError):
    """A time integration failed; `trajectory_indices` lists the offenders."""

    def __init__(self, message, trajectory_indices=()):
        super().__init__(message)
        self.trajectory_indices = tuple(trajectory_indices)


class StepSizeError(SimulationError):
    """Norm drift exceeded the per-step bound, indicating an unstable step size."""


class FitError(SimulationError):
    """Calibration fit could not be performed on the supplied data."""


class SqueezingUndefinedError(SimulationError):
    """Mean spin is consistent with zero; the Wineland parameter is undefined."""


class ConfigError(Exception):
    """Experiment configuration is missing, malformed, or inconsistent."""
