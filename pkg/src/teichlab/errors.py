"""Exception hierarchy shared by every engine.

The CLI maps :class:`ValidationError` subclasses to exit status 2 and
:class:`NumericAssumptionError` subclasses to exit status 3.
"""

from __future__ import annotations


class TeichlabError(Exception):
    """Base class for all package errors."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ValidationError(TeichlabError, ValueError):
    code = "validation-error"


class InvalidArgument(ValidationError):
    code = "invalid-argument"


class ConfigurationError(ValidationError):
    code = "configuration-error"


class InvalidLoop(ValidationError):
    code = "invalid-loop"


class InconsistentInput(ValidationError):
    code = "inconsistent-input"


class NumericAssumptionError(TeichlabError, ArithmeticError):
    code = "numeric-assumption"


class NonHyperbolicElement(NumericAssumptionError):
    """Raised when a trace has ``|Tr| <= 2`` (up to the parabolic tolerance)."""

    code = "non-hyperbolic-element"

    def __init__(self, kind: str, excess: float):
        self.kind = kind  # "parabolic" or "elliptic"
        self.excess = excess
        super().__init__(f"{kind} element: |Tr| - 2 = {excess:.3e}")


class NumericFailure(NumericAssumptionError):
    code = "numeric-failure"


class AssumptionViolated(NumericAssumptionError):
    code = "assumption-violated"


class CalibrationFailure(NumericAssumptionError):
    code = "calibration-failure"


class FitFailure(NumericAssumptionError):
    code = "fit-failure"


class DegreeTooHigh(NumericAssumptionError):
    code = "degree-too-high"


class EmptyDensity(NumericAssumptionError):
    code = "empty-density"


class MarginTooSmall(NumericAssumptionError):
    code = "margin-too-small"
