"""Space-time test function behind the nonexistence argument.

On dyadic radii ``r_k = 2^k r0`` and shells ``Q_k \\ Q_{k-1}`` with
``Q_k = B(r_k) x [0, r_k^2)`` the test function is

    phi = a b_k h(r / r_{k-1}) h(t / r_{k-1}^2) + T_k,   b_k = (r_k - r_{k-1})^2 / V(r_k)^(p-1),

with ``phi = 1`` on ``Q_0``, ``a = 1 / sum b_k`` and ``T_k = a sum_{j>k} b_j``.
The offsets use the same squared shell width as the main term; that is what
makes ``phi`` continuous across interfaces and equal to 1 on ``Q_0``.

Everything the argument needs from ``phi`` is measured here: the constants in
the first/second radial derivative bounds, in ``-Laplacian(phi)`` and in
``-d_t phi``, all in units of ``a / V(r_k)^(p-1)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import trapezoid

from .criterion import check_p, integral_tail
from .errors import ConditionGViolation, DomainMismatch, RangeExceeded, ValidationError
from .manifold import ModelManifold, check_condition_G

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Cutoff:
    """``h = 1`` on ``[0,1]``, ``1 - S(r-1)`` on ``[1,2]``, ``0`` beyond; ``S`` the quintic smoothstep."""

    transition: Polynomial
    max_dh: float
    max_d2h: float

    @property
    def C1_h(self) -> float:
        return max(self.max_dh, self.max_d2h)

    def _piece(self, poly, r, inside_value, outside_value):
        r = np.asarray(r, dtype=float)
        out = np.where(r <= 1.0, inside_value, outside_value).astype(float)
        mid = (r > 1.0) & (r < 2.0)
        out[mid] = poly(r[mid])
        return out

    def __call__(self, r):
        return self._piece(self.transition, r, 1.0, 0.0)

    def d1(self, r):
        return self._piece(self.transition.deriv(), r, 0.0, 0.0)

    def d2(self, r):
        return self._piece(self.transition.deriv(2), r, 0.0, 0.0)

    def pieces(self) -> dict:
        return {"[0,1]": [1.0], "[1,2]": self.transition.convert().coef.tolist(), "[2,inf)": [0.0]}


def _abs_max_on(poly: Polynomial, lo: float, hi: float) -> float:
    cands = [lo, hi] + [float(z.real) for z in poly.deriv().roots()
                        if abs(z.imag) < 1e-12 and lo <= z.real <= hi]
    return max(abs(float(poly(c))) for c in cands)


def build_cutoff() -> Cutoff:
    x = Polynomial([-1.0, 1.0])            # r - 1
    smooth = 10 * x ** 3 - 15 * x ** 4 + 6 * x ** 5
    h = 1.0 - smooth
    return Cutoff(h, _abs_max_on(h.deriv(), 1.0, 2.0), _abs_max_on(h.deriv(2), 1.0, 2.0))


@dataclass
class Certificate:
    manifold: ModelManifold
    p: float
    r0: float
    i: int
    radii: np.ndarray
    b: np.ndarray                # b_k for k = 1..i (index 0 unused, set to nan)
    a: float
    T: np.ndarray                # T_k for k = 0..i, T_0 = a sum b = 1
    cutoff: Cutoff = field(default_factory=build_cutoff)

    @property
    def q(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def vpow(self) -> np.ndarray:
        """``V(r_k)^(p-1)`` for ``k = 0..i``."""
        return np.asarray(self.manifold.volume(self.radii)) ** (self.p - 1.0)

    def shell_index(self, r, t) -> np.ndarray:
        """0 inside ``Q_0``, ``k`` on ``Q_k \\ Q_{k-1}``, ``i+1`` outside ``Q_i``."""
        kr = np.searchsorted(self.radii, np.asarray(r, dtype=float), side="right")
        kt = np.searchsorted(self.radii ** 2, np.asarray(t, dtype=float), side="right")
        return np.maximum(kr, kt)

    def shell_value(self, k: int, r, t):
        """Shell-``k`` formula, evaluated anywhere (used for one-sided limits)."""
        rk = self.radii[k - 1]
        return self.a * self.b[k] * self.cutoff(np.asarray(r) / rk) * self.cutoff(np.asarray(t) / rk ** 2) + self.T[k]

    def _by_shell(self, r, t, fn, inner):
        r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))
        k = self.shell_index(r, t)
        out = np.zeros(r.shape)
        out[k == 0] = inner
        for s in range(1, self.i + 1):
            sel = k == s
            if sel.any():
                out[sel] = fn(s, r[sel], t[sel])
        return out

    def phi(self, r, t):
        return self._by_shell(r, t, self.shell_value, 1.0)

    def _coef(self, s):
        return self.a * self.b[s], self.radii[s - 1]

    def dphi_dr(self, r, t):
        def f(s, r, t):
            c, rk = self._coef(s)
            return c * self.cutoff.d1(r / rk) / rk * self.cutoff(t / rk ** 2)
        return self._by_shell(r, t, f, 0.0)

    def d2phi_dr2(self, r, t):
        def f(s, r, t):
            c, rk = self._coef(s)
            return c * self.cutoff.d2(r / rk) / rk ** 2 * self.cutoff(t / rk ** 2)
        return self._by_shell(r, t, f, 0.0)

    def dphi_dt(self, r, t):
        def f(s, r, t):
            c, rk = self._coef(s)
            return c * self.cutoff(r / rk) * self.cutoff.d1(t / rk ** 2) / rk ** 2
        return self._by_shell(r, t, f, 0.0)

    def laplacian(self, r, t):
        """Radial Laplacian ``phi_rr + (log A)' phi_r`` (zero drift term where ``phi_r = 0``)."""
        r = np.asarray(r, dtype=float)
        d1 = self.dphi_dr(r, t)
        lap = self.d2phi_dr2(r, t)
        nz = d1 != 0
        if np.any(nz):
            rr = np.broadcast_to(r, d1.shape)[nz]
            lap[nz] += self.manifold.radial_drift(rr) * d1[nz]
        return lap

    def to_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "r0": self.r0, "i": self.i, "a": self.a,
                "radii": self.radii.tolist(), "T": self.T[1:].tolist(),
                "shell_terms": self.b[1:].tolist(), "cutoff": self.cutoff.pieces(),
                "C1_h": self.cutoff.C1_h}


def _shell_terms(m: ModelManifold, p: float, radii: np.ndarray) -> np.ndarray:
    vol = np.asarray(m.volume(radii[1:]), dtype=float)
    return np.concatenate([[np.nan], (np.diff(radii) ** 2) / vol ** (p - 1.0)])


def build_certificate(m: ModelManifold, p: float, r0: float, i: int) -> Certificate:
    p = check_p(p)
    if i < 2:
        raise ValidationError("need at least two shells", i=i)
    if not r0 > 0:
        raise ValidationError("r0 must be positive", r0=r0)
    radii = r0 * 2.0 ** np.arange(i + 1)
    if radii[-1] > m.R_max:
        raise RangeExceeded("outer radius exceeds R_max", r_i=float(radii[-1]), R_max=m.R_max)
    b = _shell_terms(m, p, radii)
    a = 1.0 / math.fsum(b[1:])
    # tail sums from the outside in; T_0 is the full normalised sum
    tails = np.concatenate([np.cumsum(b[1:][::-1])[::-1], [0.0]])
    T = a * tails
    T[-1] = 0.0
    return Certificate(m, p, float(r0), int(i), radii, b, a, T)


@dataclass
class BoundsReport:
    shells: list
    C_dr: float
    C_drr: float
    C_lap: float
    C_t: float
    max_interface_jump: float
    normalization_error: float
    condition_G: dict
    monotone: bool

    def to_dict(self) -> dict:
        return {"per_shell": self.shells, "C_dr": self.C_dr, "C_drr": self.C_drr,
                "C_lap": self.C_lap, "C_t": self.C_t,
                "max_interface_jump": self.max_interface_jump,
                "normalization_error": self.normalization_error,
                "condition_G": self.condition_G, "monotone": self.monotone}


def verify_bounds(cert: Certificate, n_r: int = 64, n_t: int = 16) -> BoundsReport:
    """Per-shell measured constants on a log-spaced sample.

    Constants are expressed as multiples of ``a (r_k - r_{k-1}) / V(r_k)^(p-1)``
    (first radial derivative) or ``a / V(r_k)^(p-1)`` (everything else).
    """
    m = cert.manifold
    G = check_condition_G(m, cert.r0 / 2.0, float(cert.radii[-1]))
    if not G.holds:
        raise ConditionGViolation("drift bound fails on the certificate range", **G.to_dict())
    vp = cert.vpow
    shells = []
    monotone = True
    for k in range(1, cert.i + 1):
        lo, hi = cert.radii[k - 1], cert.radii[k]
        r = np.geomspace(lo / 2.0, hi, n_r + 2)[1:-1]
        t = np.geomspace(lo ** 2 / 4.0, hi ** 2, n_t + 2)[1:-1]
        R, Tm = np.meshgrid(r, t, indexing="ij")
        inside = cert.shell_index(R, Tm) == k
        R, Tm = R[inside], Tm[inside]
        unit = cert.a / vp[k]
        d1 = cert.dphi_dr(R, Tm)
        d2 = cert.d2phi_dr2(R, Tm)
        lap = cert.laplacian(R, Tm)
        dt = cert.dphi_dt(R, Tm)
        monotone &= bool(np.all(d1 <= 0.0) and np.all(dt <= 0.0))
        shells.append({
            "k": k,
            "C_dr": float(np.max(-d1) / (unit * (hi - lo))),
            "C_drr": float(np.max(np.abs(d2)) / unit),
            "C_lap": float(max(np.max(-lap), 0.0) / unit),
            "C_t": float(max(np.max(-dt), 0.0) / unit),
        })

    # interfaces: shell k at its outer radius vs shell k+1 at its inner one
    jump = 0.0
    tt = np.linspace(0.0, 0.99, 7)
    for k in range(1, cert.i):
        rk = cert.radii[k]
        for frac in tt:
            t = frac * rk ** 2
            left = float(cert.shell_value(k, rk, t)) if t < rk ** 2 else float(cert.T[k])
            right = float(cert.shell_value(k + 1, rk, t))
            jump = max(jump, abs(left - right) / max(abs(left), abs(right), 1e-300))
    edge = float(cert.shell_value(cert.i, cert.radii[-1], 0.0))
    jump = max(jump, abs(edge))
    norm_err = abs(float(cert.shell_value(1, cert.r0, 0.0)) - 1.0)

    def worst(key):
        return max(s[key] for s in shells)

    return BoundsReport(shells, worst("C_dr"), worst("C_drr"), worst("C_lap"), worst("C_t"),
                        jump, norm_err, G.to_dict(), monotone)


@dataclass
class DecayTable:
    rows: list
    first_i: Optional[int]
    complete: bool

    def to_dict(self) -> dict:
        return {"rows": self.rows, "first_i_with_a_le_1_over_r0": self.first_i,
                "complete": self.complete}


def a_decay(m: ModelManifold, p: float, r0: float, i_list: Iterable[int],
            search_first: bool = True, i_search_max: int = 4096) -> DecayTable:
    """Tabulate ``a(i)`` against ``int_{2 r0}^{r_i} r / V^(p-1)`` and find the first ``a <= 1/r0``."""
    p = check_p(p)
    rows = []
    for i in sorted(set(int(v) for v in i_list)):
        if i < 2:
            raise ValidationError("i must be >= 2", i=i)
        r_i = r0 * 2.0 ** i
        if r_i > m.R_max:
            raise RangeExceeded("r_i beyond R_max", i=i, partial=rows)
        a = build_certificate(m, p, r0, i).a
        integral = integral_tail(m, p, 2.0 * r0, r_i)
        rows.append({"i": i, "a": a, "integral": integral, "a_times_integral": a * integral})
    first = None
    if search_first:
        # running sum: a(i)^-1 = sum_{k<=i} b_k
        acc = 0.0
        r_prev = r0
        k = 0
        while k < i_search_max:
            k += 1
            r_k = r0 * 2.0 ** k
            if r_k > m.R_max:
                raise RangeExceeded("a(i) > 1/r0 up to R_max", r0=r0, reached_i=k - 1, partial=rows)
            acc += (r_k - r_prev) ** 2 / float(m.volume(r_k)) ** (p - 1.0)
            r_prev = r_k
            if k >= 2 and 1.0 / acc <= 1.0 / r0:
                first = k
                break
    return DecayTable(rows, first, first is not None)


@dataclass
class Pairing:
    lhs: float
    rhs: float
    holds: bool
    C: float
    clipped: bool

    def to_dict(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "holds": self.holds, "C": self.C,
                "clipped": self.clipped}


def pairing(cert: Certificate, u, bounds: Optional[BoundsReport] = None) -> Pairing:
    """Hoelder pairing: ``(iint u^p phi^q)^((p-1)/p)`` against ``q C 4^(1/q) a^((q-1)/q)``.

    ``u`` is a :class:`fujita_lab.picard.SpaceTimeField` (or anything with
    ``grid``, ``times``, ``values``); ``C`` is the largest per-shell
    ``C_lap + C_t``. The factor ``4^(1/q)`` comes from
    ``r_k^2 = 4 (r_k - r_{k-1})^2`` on dyadic radii.
    """
    if u.grid.R < cert.r0 or u.times[-1] <= 0:
        raise DomainMismatch("field does not cover Q_0", R=u.grid.R, r0=cert.r0)
    vals = np.asarray(u.values, dtype=float)
    if np.any(vals < 0):
        raise ValidationError("pairing expects a nonnegative field")
    bounds = bounds or verify_bounds(cert)
    r_i = cert.radii[-1]
    clipped = bool(u.grid.R < r_i or u.times[-1] < r_i ** 2)
    if clipped:
        log.warning("field covers r <= %.3g, t <= %.3g; Q_i needs r_i = %.3g", u.grid.R, u.times[-1], r_i)
    w = u.grid.weights(cert.manifold)
    R, Tm = np.meshgrid(u.grid.nodes, u.times, indexing="xy")
    integrand = (vals ** cert.p * cert.phi(R, Tm) ** cert.q) @ w
    lhs = float(trapezoid(integrand, u.times)) ** ((cert.p - 1.0) / cert.p)
    C = max(s["C_lap"] + s["C_t"] for s in bounds.shells)
    q = cert.q
    rhs = q * C * 4.0 ** (1.0 / q) * cert.a ** ((q - 1.0) / q)
    return Pairing(lhs, rhs, lhs <= rhs, C, clipped)
