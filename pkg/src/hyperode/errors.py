"""Exception types shared across the package.

The CLI maps these onto stable exit codes: usage/config problems exit 2,
I/O problems exit 3, numeric and training failures exit 4.
"""


class HyperodeError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(HyperodeError, ValueError):
    """Array or layout shapes do not match."""


class MeshError(HyperodeError, ValueError):
    """Trajectory mesh is missing, mismatched, or not uniform."""


class RangeError(HyperodeError, ValueError):
    """Scalar argument outside its documented range."""


class SingularParameterError(HyperodeError, ValueError):
    """Parameter value makes the requested construction singular (e.g. alpha=0)."""


class MetricError(HyperodeError, ValueError):
    """Metric is undefined on the given inputs."""


class NumericError(HyperodeError, ArithmeticError):
    """Non-finite values or numeric blow-up during computation."""

    def __init__(self, message, *, s=None, stage=None, step=None):
        super().__init__(message)
        self.s = s
        self.stage = stage
        self.step = step


class StiffnessError(NumericError):
    """Adaptive solver step size underflowed; problem too stiff for the method."""


class TrainingError(NumericError):
    """Training loss became non-finite."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration
