"""Exception hierarchy shared by every stage of the estimation pipeline."""

from __future__ import annotations


class SvcplmError(Exception):
    """Base class. ``stage`` is filled in by the pipeline when it re-raises."""

    stage: str | None = None

    def with_stage(self, stage: str) -> "SvcplmError":
        if self.stage is None:
            self.stage = stage
        return self

    def __str__(self) -> str:
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


class DatasetValidationError(SvcplmError, ValueError):
    """Malformed input data (shapes, missing columns, non-finite entries)."""


class InvalidBandwidthError(SvcplmError, ValueError):
    pass


class DegenerateSampleError(SvcplmError, ValueError):
    """Sample too small or without spread for the requested quantity."""


class SingularDesignError(SvcplmError, ArithmeticError):
    """A (local) weighted least-squares design is numerically singular.

    Parameters
    ----------
    message : str
    condition : float, optional
        Condition number estimate of the weighted normal matrix.
    location : float, optional
        Evaluation point (u or v) at which the local design failed.
    index : int, optional
        Sample index associated with the failure, if any.
    """

    def __init__(self, message, condition=None, location=None, index=None):
        super().__init__(message)
        self.condition = condition
        self.location = location
        self.index = index


class CollinearCovariatesError(SingularDesignError):
    """The profiled design (I - S) Z_hat is rank deficient."""


class QuadratureError(SvcplmError, ArithmeticError):
    pass


class InvalidHypothesisError(SvcplmError, ValueError):
    pass


class DegenerateCovarianceError(SvcplmError, ArithmeticError):
    pass


class BandwidthSelectionError(SvcplmError):
    """Every candidate bandwidth failed."""


class BootstrapFailureError(SvcplmError):
    pass


class SimulationInstabilityError(SvcplmError):
    """Too many Monte Carlo replicates failed within one cell."""
