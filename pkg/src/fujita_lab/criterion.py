"""Convergence of ``int^inf t / V(t)^(p-1) dt`` and Fujita-type thresholds.

Two routes: ``classify`` decides power-log families exactly from their
exponents; ``classify_numeric`` works from partial integrals of an arbitrary
volume profile and is allowed to say it cannot tell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy import integrate

from .errors import DomainError, InsufficientRange, ValidationError
from .manifold import ModelManifold, VolumeFamily

DIVERGENT = "Divergent"
CONVERGENT = "Convergent"
INCONCLUSIVE = "Inconclusive"

P_FLOOR = 1.0 + 1e-9
EXPONENT_TOL = 1e-9

# numeric dead band on the fitted tail exponents
POWER_BAND = 0.03
LOG_BORDER_BAND = 0.05
LOG_CONVERGENT_EDGE = 0.25


@dataclass
class CriterionVerdict:
    kind: str
    evidence: dict = field(default_factory=dict)
    witness: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"verdict": self.kind, "evidence": self.evidence, "witness": self.witness}


def check_p(p: float) -> float:
    p = float(p)
    if not p > P_FLOOR:
        raise ValidationError("exponent p must satisfy p > 1", p=p)
    return p


def _volume_fn(V: Union[Callable, ModelManifold, VolumeFamily]) -> Callable:
    if isinstance(V, (ModelManifold, VolumeFamily)):
        return V.volume
    return V


def integral_tail(V, p: float, r0: float, R: float) -> float:
    """``int_{r0}^{R} t / V(t)^(p-1) dt``; ``R`` may be ``inf``."""
    p = check_p(p)
    vol = _volume_fn(V)
    if not R > r0:
        raise ValidationError("need R > r0", r0=r0, R=R)

    def f(t):
        v = float(vol(t))
        if not v > 0:
            raise DomainError("V(t) vanishes on the integration range", t=t)
        return t / v ** (p - 1.0)

    if math.isinf(R):
        val, _ = integrate.quad(f, r0, math.inf, epsabs=0.0, epsrel=1e-10, limit=400)
        return val
    # doubling pieces keep the quadrature well-scaled over wide ranges
    edges = [r0]
    while edges[-1] * 2.0 < R:
        edges.append(edges[-1] * 2.0)
    edges.append(R)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-12, limit=200)
        total += val
    return total


def classify(family: VolumeFamily, p: float) -> CriterionVerdict:
    """Iterated-log integral test on the family exponents.

    The integrand is ``t^(1 - a1(p-1)) (ln t)^(-a2(p-1)) ...``; the integral
    diverges iff ``(a1(p-1), a2(p-1), ...)`` is lexicographically at most
    ``(2, 1, 1, ...)``, missing trailing exponents counting as zero.
    """
    p = check_p(p)
    scaled = [a * (p - 1.0) for a in family.exponents]
    ref = [2.0] + [1.0] * (len(scaled) - 1)
    for i, (c, b) in enumerate(zip(scaled, ref)):
        if math.isclose(c, b, rel_tol=EXPONENT_TOL, abs_tol=EXPONENT_TOL):
            continue
        kind = DIVERGENT if c < b else CONVERGENT
        return CriterionVerdict(kind, witness={
            "scaled_exponents": scaled, "borderline": ref, "decided_at": i,
            "comparison": "<" if c < b else ">",
        })
    # every exponent on the borderline: the next (absent) one is 0 < 1
    return CriterionVerdict(DIVERGENT, witness={
        "scaled_exponents": scaled, "borderline": ref, "decided_at": len(scaled),
        "comparison": "borderline chain",
    })


def fujita_exponent(family: VolumeFamily) -> float:
    """``1 + 2/alpha1``: where ``alpha1 (p-1)`` crosses 2."""
    if not family.alpha1 > 0:
        raise ValidationError("alpha1 must be positive")
    return 1.0 + 2.0 / family.alpha1


def _tail_fit(mid: np.ndarray, incr: np.ndarray):
    """Least squares ``log D = c0 + c1 log R + c2 log log R``."""
    y = np.log(incr)
    x1 = np.log(mid)
    X = np.column_stack([np.ones_like(x1), x1, np.log(x1)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.max(np.abs(X @ coef - y)))
    power_only = np.polyfit(x1, y, 1)[0]
    return float(coef[1]), float(coef[2]), float(power_only), resid


def classify_numeric(m: ModelManifold, p: float, r0: float, min_doublings: int = 6) -> CriterionVerdict:
    """Classify from partial integrals over doubling radii ``r0 2^j``.

    The increments ``D_j = I(R_{j+1}) - I(R_j)`` behave like
    ``R^c1 (log R)^c2``; a fit of the outer doublings yields the two tail
    exponents. Positive ``c1`` diverges, negative converges; when ``c1`` is in
    the dead band the log exponent decides (``c2 >= -1`` diverges, clearly
    below converges), and anything in between is Inconclusive.
    """
    p = check_p(p)
    if r0 <= 0:
        raise ValidationError("r0 must be positive")
    J = int(math.floor(math.log2(m.R_max / r0) + 1e-12))
    if J < min_doublings:
        raise InsufficientRange("R_max must reach at least 2^6 r0", R_max=m.R_max, r0=r0)
    radii = r0 * 2.0 ** np.arange(J + 1)
    incr = np.array([integral_tail(m, p, a, b) for a, b in zip(radii[:-1], radii[1:])])
    partial = np.concatenate([[0.0], np.cumsum(incr)])
    mid = radii[:-1] * math.sqrt(2.0)
    keep = mid > math.e
    keep &= np.arange(J) >= J // 2
    if keep.sum() < 4:
        keep = np.zeros(J, dtype=bool)
        keep[-4:] = True
    keep &= incr > 0
    c1, c2, c1_power, resid = _tail_fit(mid[keep], incr[keep])
    growth = partial[-1] / partial[-4] if partial[-4] > 0 else math.inf
    evidence = {
        "radii": radii.tolist(),
        "partial_integrals": partial.tolist(),
        "fit_power": c1,
        "fit_log": c2,
        "fit_power_only": c1_power,
        "fit_residual": resid,
        "growth_last_three_doublings": growth,
        "tail_ratio_last": float(incr[-2] / incr[-1]) if incr[-1] > 0 else math.inf,
    }
    if c1 > POWER_BAND:
        kind = DIVERGENT
    elif c1 < -POWER_BAND:
        kind = CONVERGENT
    elif c2 >= -1.0 - LOG_BORDER_BAND:
        kind = DIVERGENT
    elif c2 <= -1.0 - LOG_CONVERGENT_EDGE:
        kind = CONVERGENT
    else:
        kind = INCONCLUSIVE
    return CriterionVerdict(kind, evidence=evidence)
