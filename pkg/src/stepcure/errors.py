"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, ``DataError``
exits 2, ``NumericalError`` exits 3.
"""


class StepCureError(Exception):
    """Base class for all package-level errors."""


class DataError(StepCureError):
    """Malformed, inconsistent, or inadequate input data."""


class InsufficientDataError(DataError):
    """A fit requires events in a segment that has none."""

    def __init__(self, segment: str, message: str | None = None):
        self.segment = segment
        super().__init__(message or f"insufficient data: no events in segment {segment}")


class NumericalError(StepCureError):
    """Numerical evaluation or optimization failure."""


class EvaluationError(NumericalError):
    """A hazard/cumulative-hazard evaluation produced a non-finite value."""

    def __init__(self, kind, params, t, message: str | None = None):
        self.kind = kind
        self.params = params
        self.t = t
        super().__init__(
            message
            or f"non-finite evaluation for family={getattr(kind, 'value', kind)} params={params} t={t}"
        )


class MStepError(NumericalError):
    """An M-step optimizer failed to converge.

    Carries the last iterate and its gradient norm for diagnosis.
    """

    def __init__(self, last_iterate, grad_norm: float, message: str | None = None):
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm
        super().__init__(
            message or f"M-step did not converge (gradient norm {grad_norm:.3e})"
        )


class CalibrationError(NumericalError):
    """Requested censoring fraction is outside the achievable range."""

    def __init__(self, target: float, achievable: tuple[float, float]):
        self.target = target
        self.achievable = achievable
        lo, hi = achievable
        super().__init__(
            f"target censoring fraction {target:.4f} unreachable; "
            f"achievable range is ({lo:.4f}, {hi:.4f})"
        )
