"""Exception types shared across the toolkit."""


class SplineFusionError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(SplineFusionError, ValueError):
    """An argument violates a documented precondition."""


class OutOfDomainError(SplineFusionError):
    """A sample time falls outside the valid spline domain.

    Carries the valid half-open interval ``(t_min, t_max)``.
    """

    def __init__(self, t, t_min, t_max):
        self.t = t
        self.t_min = t_min
        self.t_max = t_max
        super().__init__(
            f"time {t:.9f} outside valid domain [{t_min:.9f}, {t_max:.9f})"
        )


class BehindCameraError(SplineFusionError):
    """A 3-D point lies behind (or on) the camera plane."""


class DataError(SplineFusionError):
    """A dataset file or stream is malformed or inconsistent."""


class DegenerateConfigurationError(SplineFusionError):
    """A geometric problem is rank deficient (e.g. collinear points)."""


class BootstrapUnavailableError(SplineFusionError):
    """IMU-based scale bootstrap cannot run on this dataset."""


class NumericalFailureError(SplineFusionError):
    """The solver could not make progress at any damping level."""
