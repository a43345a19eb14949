"""Exception hierarchy shared by every module.

Each error carries a short machine-readable ``code`` so the command line can
serialise it into a JSON error object without string matching.
"""
from __future__ import annotations

from typing import Any


class FujitaLabError(Exception):
    """Base class; ``details`` is merged into the CLI error object."""

    code = "error"
    exit_code = 3

    def __init__(self, message: str, **details: Any) -> None:
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": str(self)}
        out.update({k: _jsonable(v) for k, v in self.details.items()})
        return out


def _jsonable(value: Any) -> Any:
    if hasattr(value, "to_dict"):
        return _jsonable(value.to_dict())
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class ValidationError(FujitaLabError):
    code = "validation_error"
    exit_code = 2


# geometry
class NonmonotoneVolume(FujitaLabError):
    code = "nonmonotone_volume"
    exit_code = 2


class SpliceMismatch(FujitaLabError):
    code = "splice_mismatch"
    exit_code = 2


class OutOfRange(FujitaLabError):
    code = "out_of_range"


class OriginSingularity(FujitaLabError):
    code = "origin_singularity"


# criterion
class DomainError(FujitaLabError):
    code = "domain_error"


class InsufficientRange(FujitaLabError):
    code = "insufficient_range"


# heat kernel
class StabilityFailure(FujitaLabError):
    code = "stability_failure"


class BoundaryContamination(FujitaLabError):
    code = "boundary_contamination"


class ResolutionError(BoundaryContamination):
    """Requested time is below what the grid can resolve."""

    code = "resolution_error"


# semilinear
class GridTooCoarse(FujitaLabError):
    code = "grid_too_coarse"


class BudgetExhausted(FujitaLabError):
    code = "budget_exhausted"
    exit_code = 4


# picard
class DivergentIntegral(FujitaLabError):
    code = "divergent_integral"


class EnvelopeViolation(FujitaLabError):
    code = "envelope_violation"


class NoContraction(FujitaLabError):
    code = "no_contraction"


class ZeroDistance(FujitaLabError):
    code = "zero_distance"


# certificate
class RangeExceeded(FujitaLabError):
    code = "range_exceeded"


class ConditionGViolation(FujitaLabError):
    code = "condition_g_violation"


class DomainMismatch(FujitaLabError):
    code = "domain_mismatch"
