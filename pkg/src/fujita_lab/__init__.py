"""Numerical laboratory for Fujita-type blow-up on radial model manifolds.

The modules follow the structure of the dichotomy for ``u_t = Delta u + u^p``:
geometry (:mod:`manifold`), the volume criterion (:mod:`criterion`), the
linear heat flow (:mod:`heat_kernel`), direct simulation (:mod:`semilinear`),
the small-data fixed point (:mod:`picard`) and the nonexistence test function
(:mod:`certificate`).
"""
from __future__ import annotations

__version__ = "0.1.0"

from .criterion import classify, classify_numeric, fujita_exponent, integral_tail
from .errors import FujitaLabError, ValidationError
from .manifold import (
    ModelManifold,
    VolumeFamily,
    builtin,
    check_condition_G,
    euclidean,
    make_power_log_manifold,
)
from .semilinear import InitialData, Outcome, SolverControls, simulate, sweep_exponent

__all__ = [
    "FujitaLabError",
    "InitialData",
    "ModelManifold",
    "Outcome",
    "SolverControls",
    "ValidationError",
    "VolumeFamily",
    "builtin",
    "check_condition_G",
    "classify",
    "classify_numeric",
    "euclidean",
    "fujita_exponent",
    "integral_tail",
    "make_power_log_manifold",
    "simulate",
    "sweep_exponent",
]
