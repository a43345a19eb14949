"""Rotationally symmetric model manifolds with prescribed volume growth.

A model manifold is ``dr^2 + psi(r)^2 dtheta^2`` over the unit ``(n-1)``-sphere.
Every geometric quantity used elsewhere reduces to the sphere-area function
``A(r) = V'(r) = omega_{n-1} psi(r)^{n-1}`` and its log-derivative, the radial
drift of the Laplacian.

Manifolds are built by splicing a Euclidean cap onto a target volume profile:
``V = V_euc + S (V_target - V_euc)`` on ``[r_s, 2 r_s]`` with ``S`` the quintic
smoothstep, so ``V`` is C^2 and ``psi`` is C^1, and ``V`` equals the target
exactly beyond ``2 r_s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
from scipy import integrate

from .errors import (
    NonmonotoneVolume,
    OriginSingularity,
    OutOfRange,
    SpliceMismatch,
    ValidationError,
)

R_MAX_FACTOR = 2.0 ** 12


def sphere_area(n: int) -> float:
    """Area ``omega_{n-1}`` of the unit sphere in R^n (2 points when n = 1)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def _tower(k: int) -> float:
    # smallest r with k-fold iterated log >= 1
    r = 1.0
    for _ in range(k):
        r = math.exp(r)
    return r


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x ** 3 * (10.0 - 15.0 * x + 6.0 * x ** 2)


def smoothstep_d1(x):
    x = np.clip(x, 0.0, 1.0)
    return 30.0 * x ** 2 * (1.0 - x) ** 2


def smoothstep_d2(x):
    x = np.clip(x, 0.0, 1.0)
    return 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x)


class VolumeProfile(Protocol):
    """What a splice target must provide (all vectorised, r beyond the cap)."""

    def volume(self, r): ...

    def log_area(self, r): ...

    def dlog_area(self, r): ...


@dataclass(frozen=True)
class VolumeFamily:
    """``V(r) = C r^a1 (ln r)^a2 (ln ln r)^a3 ...`` valid for ``r >= r_base``."""

    exponents: tuple
    constant: float = 1.0
    r_base: Optional[float] = None

    def __post_init__(self):
        exps = tuple(float(a) for a in self.exponents)
        if not exps:
            raise ValidationError("VolumeFamily needs at least one exponent")
        if not exps[0] > 0:
            raise ValidationError("leading exponent must be positive", alpha1=exps[0])
        if not self.constant > 0:
            raise ValidationError("family constant must be positive", C=self.constant)
        floor = _tower(len(exps) - 1) if len(exps) > 1 else 1.0
        r_base = floor if self.r_base is None else float(self.r_base)
        if r_base < floor * (1.0 - 1e-12):
            raise ValidationError(
                "r_base too small: iterated logarithms must be >= 1",
                r_base=r_base, minimum=floor,
            )
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "r_base", r_base)

    @property
    def alpha1(self) -> float:
        return self.exponents[0]

    @property
    def depth(self) -> int:
        return len(self.exponents)

    def _logs(self, r):
        """Iterated logarithms ``L_1 = ln r, L_2 = ln L_1, ...``."""
        out = []
        cur = np.asarray(r, dtype=float)
        for _ in range(self.depth - 1):
            cur = np.log(cur)
            out.append(cur)
        return out

    def log_volume(self, r):
        r = np.asarray(r, dtype=float)
        val = math.log(self.constant) + self.alpha1 * np.log(r)
        for a, L in zip(self.exponents[1:], self._logs(r)):
            val = val + a * np.log(L)
        return val

    def volume(self, r):
        return np.exp(self.log_volume(r))

    def _E(self, r):
        # r V'/V
        r = np.asarray(r, dtype=float)
        E = np.full_like(r, self.alpha1)
        dE = np.zeros_like(r)
        prods = []
        P = np.ones_like(r)
        for L in self._logs(r):
            P = P * L
            prods.append(P)
        for j, a in enumerate(self.exponents[1:]):
            Pj = prods[j]
            E = E + a / Pj
            inner = sum(1.0 / (r * prods[m]) for m in range(j + 1))
            dE = dE - a / Pj * inner
        return E, dE

    def log_area(self, r):
        r = np.asarray(r, dtype=float)
        E, _ = self._E(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.log_volume(r) + np.log(E) - np.log(r)

    def area(self, r):
        return np.exp(self.log_area(r))

    def dlog_area(self, r):
        r = np.asarray(r, dtype=float)
        E, dE = self._E(r)
        return (E - 1.0) / r + dE / E

    def describe(self) -> dict:
        return {"C": self.constant, "exponents": list(self.exponents), "r_base": self.r_base}


@dataclass(frozen=True)
class ExponentialVolume:
    """Target with warp ``psi(r) = exp(rate r)``: ``A(r) = omega exp((n-1) rate r)``."""

    n: int
    rate: float = 1.0

    def volume(self, r):
        k = (self.n - 1) * self.rate
        return sphere_area(self.n) * np.expm1(k * np.asarray(r, dtype=float)) / k

    def log_area(self, r):
        return math.log(sphere_area(self.n)) + (self.n - 1) * self.rate * np.asarray(r, dtype=float)

    def dlog_area(self, r):
        return np.full_like(np.asarray(r, dtype=float), (self.n - 1) * self.rate)

    def describe(self) -> dict:
        return {"warp": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class ModelManifold:
    """Spliced model manifold; ``target=None`` means flat R^n."""

    n: int
    target: Optional[object] = None
    r_splice: float = 1.0
    R_max: Optional[float] = None
    name: str = ""
    omega: float = field(init=False)
    _v_splice: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("dimension must be >= 1", n=self.n)
        if self.n == 1 and self.target is not None:
            raise ValidationError("n = 1 only supports the Euclidean line")
        if not self.r_splice > 0:
            raise ValidationError("r_splice must be positive", r_splice=self.r_splice)
        object.__setattr__(self, "omega", sphere_area(self.n))
        if self.R_max is None:
            object.__setattr__(self, "R_max", R_MAX_FACTOR * self.r_splice)
        if self.R_max <= 2.0 * self.r_splice:
            raise ValidationError("R_max must exceed 2 r_splice", R_max=self.R_max)
        object.__setattr__(self, "_v_splice", self.omega * self.r_splice ** self.n / self.n)
        if self.target is not None:
            self._validate_target()

    # -- construction checks -------------------------------------------------
    def _validate_target(self):
        rs = self.r_splice
        blend = np.linspace(rs, 2.0 * rs, 801)[1:-1]
        with np.errstate(all="ignore"):
            a_blend = self._blend_parts(blend)[1]
            outer = np.geomspace(2.0 * rs, self.R_max, 2048)
            la_outer = np.asarray(self.target.log_area(outer), dtype=float)
        bad = ~(np.isfinite(a_blend) & (a_blend > 0))
        if bad.any():
            raise NonmonotoneVolume(
                "V'(r) <= 0 in the splice zone", radius=float(blend[bad][0])
            )
        if not np.all(np.isfinite(la_outer)):
            raise NonmonotoneVolume(
                "target V'(r) not positive on the active range",
                radius=float(outer[~np.isfinite(la_outer)][0]),
            )
        # one-sided derivative agreement of psi at both knots
        for knot in (rs, 2.0 * rs):
            eps = 1e-10 * knot
            left = float(self._r_drift(np.array([knot - eps]))[0])
            right = float(self._r_drift(np.array([knot + eps]))[0])
            if abs(left - right) > 1e-6 * max(1.0, abs(left)):
                raise SpliceMismatch("C1 blend failed", knot=knot, left=left, right=right)

    # -- pieces ------------------------------------------------------------
    @property
    def is_euclidean(self) -> bool:
        return self.target is None

    def _blend_parts(self, r):
        """V, V', V'' on the splice zone."""
        rs, n, w = self.r_splice, self.n, self.omega
        x = (r - rs) / rs
        S, S1, S2 = smoothstep(x), smoothstep_d1(x) / rs, smoothstep_d2(x) / rs ** 2
        ve, ve1, ve2 = w * r ** n / n, w * r ** (n - 1), w * (n - 1) * r ** (n - 2)
        vt = self.target.volume(r)
        vt1 = np.exp(self.target.log_area(r))
        vt2 = vt1 * self.target.dlog_area(r)
        v = ve + S * (vt - ve)
        v1 = ve1 + S * (vt1 - ve1) + S1 * (vt - ve)
        v2 = ve2 + S * (vt2 - ve2) + 2.0 * S1 * (vt1 - ve1) + S2 * (vt - ve)
        return v, v1, v2

    def _regions(self, r):
        r = np.asarray(r, dtype=float)
        if self.is_euclidean:
            inner = np.ones(r.shape, dtype=bool)
            return r, inner, ~inner, ~inner
        rs = self.r_splice
        inner = r <= rs
        outer = r >= 2.0 * rs
        return r, inner, ~(inner | outer), outer

    # -- public geometry -----------------------------------------------------
    def volume(self, r):
        """Volume of the geodesic ball of radius ``r`` about the pole."""
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise OutOfRange("negative radius")
        if np.any(r > self.R_max * (1.0 + 1e-12)):
            raise OutOfRange("radius beyond R_max", R_max=self.R_max, r=float(np.max(r)))
        return self._volume(r)

    def _volume(self, r):
        r, inner, blend, outer = self._regions(r)
        out = np.empty(r.shape)
        out[inner] = self.omega * r[inner] ** self.n / self.n
        if blend.any():
            out[blend] = self._blend_parts(r[blend])[0]
        if outer.any():
            out[outer] = self.target.volume(r[outer])
        return out if out.ndim else float(out)

    def log_area(self, r):
        """``log V'(r)``; defined for every r > 0, including beyond R_max."""
        r, inner, blend, outer = self._regions(r)
        out = np.empty(r.shape)
        out[inner] = math.log(self.omega)
        if self.n > 1:
            with np.errstate(divide="ignore"):
                out[inner] += (self.n - 1) * np.log(r[inner])
        if blend.any():
            out[blend] = np.log(self._blend_parts(r[blend])[1])
        if outer.any():
            out[outer] = self.target.log_area(r[outer])
        return out if out.ndim else float(out)

    def area(self, r):
        return np.exp(self.log_area(r))

    def warp(self, r):
        """psi(r); equals r on the Euclidean cap."""
        r = np.asarray(r, dtype=float)
        if self.n == 1:
            return r
        return np.exp((self.log_area(r) - math.log(self.omega)) / (self.n - 1))

    def _r_drift(self, r):
        # r * d/dr log V'(r), exact (n-1) on the cap
        r, inner, blend, outer = self._regions(r)
        out = np.empty(r.shape)
        out[inner] = float(self.n - 1)
        if blend.any():
            _, v1, v2 = self._blend_parts(r[blend])
            out[blend] = r[blend] * v2 / v1
        if outer.any():
            out[outer] = r[outer] * self.target.dlog_area(r[outer])
        return out

    def radial_drift(self, r):
        """First-order coefficient of the radial Laplacian, ``(n-1) psi'/psi``."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise OriginSingularity("radial drift is singular at the origin")
        out = self._r_drift(r) / r
        return out if out.ndim else float(out)

    def describe(self) -> dict:
        if self.is_euclidean:
            return {"builtin": "euclidean", "dimension": self.n, "R_max": self.R_max}
        return {
            "dimension": self.n,
            "family": self.target.describe(),
            "r_splice": self.r_splice,
            "R_max": self.R_max,
            "name": self.name,
        }

    def quad_volume(self, a: float, b: float) -> float:
        """Independent check: ``int_a^b V'(s) ds`` by adaptive quadrature."""
        pts = [p for p in (self.r_splice, 2.0 * self.r_splice) if a < p < b]
        edges = [a, *pts, b]
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(lambda s: float(self.area(s)), lo, hi, epsabs=0.0, epsrel=1e-12, limit=200)
            total += val
        return total


def euclidean(n: int, R_max: Optional[float] = None) -> ModelManifold:
    return ModelManifold(n=n, target=None, r_splice=1.0, R_max=R_max, name=f"euclidean-{n}")


def make_power_log_manifold(
    n: int, family: VolumeFamily, r_splice: Optional[float] = None, R_max: Optional[float] = None
) -> ModelManifold:
    """Realise ``family`` as a model manifold spliced onto a Euclidean cap."""
    if n == 1:
        if family.depth == 1 and math.isclose(family.alpha1, 1.0) and math.isclose(family.constant, 2.0):
            return euclidean(1, R_max)
        raise ValidationError("n = 1 only admits the Euclidean family")
    if (
        family.depth == 1
        and math.isclose(family.alpha1, n, rel_tol=1e-14)
        and math.isclose(family.constant, sphere_area(n) / n, rel_tol=1e-14)
    ):
        return ModelManifold(n=n, target=None, r_splice=r_splice or 1.0, R_max=R_max, name=f"euclidean-{n}")
    rs = family.r_base if r_splice is None else float(r_splice)
    if rs < family.r_base * (1.0 - 1e-12):
        raise ValidationError("r_splice must be >= r_base", r_splice=rs, r_base=family.r_base)
    label = "V=" + "*".join(
        f"L{i}^{a:g}" if i else f"r^{a:g}" for i, a in enumerate(family.exponents)
    )
    return ModelManifold(n=n, target=family, r_splice=rs, R_max=R_max, name=label)


def exponential_warp_manifold(n: int, rate: float = 1.0, r_splice: float = 1.0,
                              R_max: Optional[float] = None) -> ModelManifold:
    return ModelManifold(n=n, target=ExponentialVolume(n, rate), r_splice=r_splice,
                         R_max=R_max, name=f"exp-warp-{n}")


@dataclass
class ConditionG:
    holds: bool
    C0: float
    witness: Optional[float]
    r_lo: float
    r_hi: float

    def to_dict(self) -> dict:
        return {"holds": self.holds, "C0": self.C0, "witness": self.witness,
                "r_lo": self.r_lo, "r_hi": self.r_hi}


def check_condition_G(m: ModelManifold, r_lo: float, r_hi: float, samples: int = 512) -> ConditionG:
    """Sup of ``r d/dr log g^{1/2}`` over a log-spaced sample of ``[r_lo, r_hi]``.

    Reports failure (with the arg-max radius as witness) when the product is
    still growing steeply across the last decade of the range.
    """
    if not (0 < r_lo < r_hi):
        raise ValidationError("need 0 < r_lo < r_hi", r_lo=r_lo, r_hi=r_hi)
    r = np.geomspace(r_lo, r_hi, samples)
    prod = m._r_drift(r)
    C0 = float(np.max(prod))
    witness = float(r[int(np.argmax(prod))])
    ref = prod[np.searchsorted(r, r_hi / 10.0)] if r_hi / 10.0 > r_lo else prod[0]
    growing = prod[-1] > 2.0 * max(ref, 0.0) and prod[-1] - ref > 1.0
    if growing or not np.isfinite(C0):
        return ConditionG(False, C0, witness, r_lo, r_hi)
    return ConditionG(True, C0, None, r_lo, r_hi)


BUILTIN_NAMES = ("euclidean-1", "euclidean-2", "euclidean-3", "power-3", "power-4", "borderline-log")


def builtin(name: str, p_border: float = 2.0, R_max: Optional[float] = None):
    """Named test manifolds, returned with the family they realise.

    Power families use ``C = 1`` with the splice radius where the Euclidean
    cap and the target enclose equal volume; the borderline family
    ``r^(2/(q-1)) (ln r)^(1/(q-1))`` (``q = p_border``) gets its constant
    matched to the cap at ``r_base = e``.
    """
    if name.startswith("euclidean-"):
        n = int(name.split("-")[1])
        fam = VolumeFamily((float(n),), sphere_area(n) / n)
        return euclidean(n, R_max), fam
    if name.startswith("power-"):
        a = float(name.split("-")[1])
        fam = VolumeFamily((a,), 1.0)
        rs = math.pi ** (1.0 / (a - 2.0))
        return make_power_log_manifold(2, fam, r_splice=rs, R_max=R_max), fam
    if name == "borderline-log":
        a1, a2 = 2.0 / (p_border - 1.0), 1.0 / (p_border - 1.0)
        rs = math.e
        C = math.pi * rs ** 2 / (rs ** a1)
        fam = VolumeFamily((a1, a2), C)
        return make_power_log_manifold(2, fam, r_splice=rs, R_max=R_max), fam
    raise ValidationError(f"unknown builtin manifold {name!r}", known=list(BUILTIN_NAMES))
