"""Fixed-point construction of small global solutions.

The mild formulation

    Tu(t) = S(t) u0 + int_0^t S(t-s) u(s)^p ds

is realised with the discrete backward-Euler semigroup ``S`` of
:mod:`fujita_lab.heat_kernel` at one fixed step ``dt``. All slice times are
integer multiples of ``dt``, so ``S(t) S(s) = S(t+s)`` holds exactly and the
envelope ``lambda P_{t+delta}`` is propagated by the same operator that acts
on the iterates. The Duhamel integral is the trapezoid rule over the slices,
accumulated recursively:

    I_k = S(t_k - t_{k-1}) (I_{k-1} + h_k/2 f_{k-1}) + h_k/2 f_k,

which equals the full trapezoid sum because of the exact semigroup property.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .criterion import CONVERGENT, check_p, classify, classify_numeric
from .errors import (
    DivergentIntegral,
    DomainMismatch,
    EnvelopeViolation,
    NoContraction,
    ValidationError,
    ZeroDistance,
)
from .heat_kernel import DiffusionOperator, RadialGrid
from .manifold import ModelManifold, VolumeFamily, sphere_area
from .semilinear import InitialData

log = logging.getLogger(__name__)

QUADRATURE_SLACK = 1e-6
TAIL_FRACTION = 0.01


@dataclass
class SpaceTimeField:
    """Values ``u(r_i, t_j)``, shape ``(J+1, N)``."""

    grid: RadialGrid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.times), self.grid.N):
            raise ValidationError("field shape does not match (times, nodes)",
                                  shape=self.values.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("field has non-finite values")

    def sup_distance(self, other: "SpaceTimeField") -> float:
        return float(np.max(np.abs(self.values - other.values)))

    def rows(self):
        """``(t, r, u)`` triples for CSV output."""
        r = self.grid.nodes
        for t, row in zip(self.times, self.values):
            for ri, ui in zip(r, row):
                yield float(t), float(ri), float(ui)


@dataclass(frozen=True)
class PicardControls:
    delta: float = 2.0
    J: int = 40
    dt: float = 0.01
    N: int = 400
    R: Optional[float] = None
    rho: float = 1.03
    uniform_to: float = 4.0
    safety: float = 0.9
    tol: float = 1e-10
    max_iter: int = 200

    def __post_init__(self):
        if not self.delta > 1.0:
            raise ValidationError("delta must exceed 1", delta=self.delta)
        if self.J < 2:
            raise ValidationError("need at least two time slices", J=self.J)
        if not self.dt > 0:
            raise ValidationError("dt must be positive", dt=self.dt)


class Propagator:
    """Exact discrete semigroup on a fixed grid and step."""

    def __init__(self, m: ModelManifold, grid: RadialGrid, dt: float):
        self.manifold = m
        self.grid = grid
        self.dt = dt
        self.op = DiffusionOperator(m, grid)
        self.weights = self.op.weights

    def ticks(self, t: float) -> int:
        return int(round(t / self.dt))

    def __call__(self, u: np.ndarray, nticks: int) -> np.ndarray:
        if nticks == 0:
            return np.array(u, dtype=float, copy=True)
        return self.op.steps(u, self.dt, nticks)

    def delta(self) -> np.ndarray:
        return self.op.delta()


def slice_times(delta: float, J: int, dt: float) -> np.ndarray:
    """``delta (2^(j/4) - 1)`` snapped to multiples of ``dt``, strictly increasing."""
    ticks = [0]
    for j in range(1, J + 1):
        k = int(round(delta * (2.0 ** (j / 4.0) - 1.0) / dt))
        ticks.append(max(k, ticks[-1] + 1))
    return np.asarray(ticks, dtype=float) * dt


# -- the constant C4 -------------------------------------------------------------

def _outer_family(m: ModelManifold) -> Optional[VolumeFamily]:
    if m.is_euclidean:
        return VolumeFamily((float(m.n),), sphere_area(m.n) / m.n)
    if isinstance(m.target, VolumeFamily):
        return m.target
    return None


def _verdict(m: ModelManifold, p: float, family: Optional[VolumeFamily]):
    fam = family or _outer_family(m)
    if fam is not None:
        return classify(fam, p)
    return classify_numeric(m, p, r0=2.0 * m.r_splice)


@dataclass
class C4Estimate:
    value: float
    partial: float
    tail_bound: float
    cutoff: float
    tail_method: str

    def to_dict(self) -> dict:
        return {"C4": self.value, "partial": self.partial, "tail_bound": self.tail_bound,
                "cutoff_radius": self.cutoff, "tail_method": self.tail_method}


def estimate_C4(m: ModelManifold, p: float, delta: float,
                family: Optional[VolumeFamily] = None) -> C4Estimate:
    """``int_0^inf V(sqrt(s+delta))^(-(p-1)) ds`` as an upper estimate.

    In ``r = sqrt(s+delta)`` the integrand is ``2 r V(r)^(1-p)``. The part up
    to a cutoff ``R`` is integrated over doubling pieces; beyond it the
    volume follows the family exactly and, with ``kappa = (p-1) inf E - 2``
    (``E = r V'/V``), the remainder is at most ``2 R^2 V(R)^(1-p) / kappa``.
    ``R`` doubles until that bound is under 1% of the partial integral. When
    ``kappa <= 0`` (log-borderline convergence) or the volume is not a
    power-log family, the tail is integrated numerically instead.
    """
    p = check_p(p)
    if not delta > 0:
        raise ValidationError("delta must be positive", delta=delta)
    verdict = _verdict(m, p, family)
    if verdict.kind != CONVERGENT:
        raise DivergentIntegral("volume integral does not converge for this p",
                                verdict=verdict.kind, p=p)
    fam = family or _outer_family(m)
    knot = 2.0 * m.r_splice
    q = p - 1.0

    def V(r):
        if fam is not None and r >= knot:
            return float(fam.volume(r))
        if r > m.R_max:
            return float(m.target.volume(r))
        return float(m.volume(r))

    def f(r):
        return 2.0 * r / V(r) ** q

    a = math.sqrt(delta)
    partial = 0.0
    R = a
    method = "analytic"
    while True:
        b = 2.0 * R
        val, _ = integrate.quad(f, R, b, epsabs=0.0, epsrel=1e-12, limit=200)
        partial += val
        R = b
        if R < knot or fam is None:
            if fam is None and R > 4.0 * knot and val < 1e-3 * TAIL_FRACTION * partial:
                break
            if R > 1e300:
                break
            continue
        sample = np.geomspace(R, R * 1e12, 256)
        E_min = min(fam.alpha1, float(np.min(fam._E(sample)[0])))
        kappa = q * E_min - 2.0
        if kappa <= 0:
            method = "numeric"
            break
        bound = 2.0 * R ** 2 / V(R) ** q / kappa
        if bound <= TAIL_FRACTION * partial:
            return C4Estimate(partial + bound, partial, bound, R, method)
        if R > 1e150:
            method = "numeric"
            break
    # numeric tail in log r, where the integrand is smooth and slowly varying
    tail, _ = integrate.quad(lambda x: f(math.exp(x)) * math.exp(x), math.log(R), math.inf,
                             epsabs=0.0, epsrel=1e-10, limit=400)
    return C4Estimate(partial + tail, partial, tail, R, "numeric")


# -- ball and operator -------------------------------------------------------------

@dataclass
class BallParams:
    lam: float
    delta: float
    p: float
    C1: float
    C4: float
    times: np.ndarray
    kernel: np.ndarray          # P_{t_j + delta}(0, r_i), shape (J+1, N)
    propagator: Propagator = field(repr=False)

    @property
    def envelope(self) -> np.ndarray:
        return self.lam * self.kernel

    @property
    def invariant_half(self) -> float:
        return self.lam ** (self.p - 1) * self.C1 ** (self.p - 1) * self.C4

    @property
    def contraction_bound(self) -> float:
        return self.p * self.invariant_half

    def with_lambda(self, lam: float) -> "BallParams":
        return BallParams(lam, self.delta, self.p, self.C1, self.C4, self.times, self.kernel,
                          self.propagator)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "delta": self.delta, "p": self.p, "C1": self.C1,
                "C4": self.C4, "contraction_bound": self.contraction_bound,
                "times": self.times.tolist()}


def choose_lambda(p: float, C1: float, C4: float, safety: float = 0.9) -> float:
    """Largest ``lambda`` meeting both ball conditions, times ``safety``."""
    k = C1 ** (p - 1.0) * C4
    lam_half = (1.0 / (2.0 * k)) ** (1.0 / (p - 1.0))
    lam_contr = (1.0 / (p * k)) ** (1.0 / (p - 1.0))
    return safety * min(lam_half, lam_contr)


def build_ball(m: ModelManifold, p: float, controls: Optional[PicardControls] = None,
               family: Optional[VolumeFamily] = None, lam: Optional[float] = None) -> BallParams:
    """Grid, slices, measured ``C1`` (over the slice times) and ``C4``, and ``lambda``."""
    p = check_p(p)
    c = controls or PicardControls()
    dt = c.dt
    delta = round(c.delta / dt) * dt
    times = slice_times(delta, c.J, dt)
    R = c.R or max(30.0, 8.0 * math.sqrt(times[-1] + delta))
    if R > m.R_max:
        raise ValidationError("picard grid radius exceeds R_max", R=R, R_max=m.R_max)
    grid = RadialGrid.graded(R, c.N, c.rho, uniform_to=min(c.uniform_to, 0.5 * R))
    prop = Propagator(m, grid, dt)
    P = prop(prop.delta(), prop.ticks(delta))
    kernel = [P]
    for k in range(1, len(times)):
        P = prop(P, prop.ticks(times[k] - times[k - 1]))
        kernel.append(P)
    kernel = np.vstack(kernel)
    vols = np.array([m.volume(math.sqrt(t + delta)) for t in times])
    C1 = float(np.max(kernel.max(axis=1) * vols))
    C4 = estimate_C4(m, p, delta, family).value
    if lam is None:
        lam = choose_lambda(p, C1, C4, c.safety)
    return BallParams(float(lam), delta, p, C1, C4, times, kernel, prop)


def _check_manifold(m: ModelManifold, params: BallParams) -> None:
    if params.propagator.manifold is not m:
        raise DomainMismatch("ball parameters were built for a different manifold")


def max_admissible_amplitude(u0: InitialData, params: BallParams) -> float:
    """Largest scale ``A`` with ``A u0/|u0| <= (lambda/2) P_delta`` on the grid."""
    shape = u0.scaled(1.0)(params.propagator.grid.nodes)
    half = 0.5 * params.lam * params.kernel[0]
    mask = shape > 1e-300
    return float(np.min(half[mask] / shape[mask]))


def small_data(params: BallParams, fraction: float = 0.5, sigma: float = 1.0) -> InitialData:
    """Gaussian at ``fraction`` of the largest admissible amplitude."""
    g = InitialData.gaussian(1.0, sigma)
    return g.scaled(fraction * max_admissible_amplitude(g, params))


def _realize_u0(u0: InitialData, params: BallParams) -> np.ndarray:
    v = u0(params.propagator.grid.nodes)
    half = 0.5 * params.lam * params.kernel[0]
    if np.any(v > half * (1.0 + QUADRATURE_SLACK)):
        i = int(np.argmax(v - half))
        raise ValidationError("u0 exceeds (lambda/2) P_delta", node=i,
                              r=float(params.propagator.grid.nodes[i]))
    return v


def heat_term(u0v: np.ndarray, params: BallParams) -> np.ndarray:
    prop, times = params.propagator, params.times
    out = [np.array(u0v, dtype=float)]
    for k in range(1, len(times)):
        out.append(prop(out[-1], prop.ticks(times[k] - times[k - 1])))
    return np.vstack(out)


def duhamel(f: np.ndarray, params: BallParams) -> np.ndarray:
    """Trapezoid Duhamel integral ``int_0^{t_k} S(t_k - s) f(s) ds`` at every slice."""
    prop, times = params.propagator, params.times
    out = np.zeros_like(f)
    for k in range(1, len(times)):
        h = times[k] - times[k - 1]
        out[k] = prop(out[k - 1] + 0.5 * h * f[k - 1], prop.ticks(h)) + 0.5 * h * f[k]
    return out


def _field(params: BallParams, values: np.ndarray) -> SpaceTimeField:
    return SpaceTimeField(params.propagator.grid, params.times, values)


def _check_envelope(values: np.ndarray, params: BallParams, what: str) -> None:
    env = params.envelope
    excess = values - env * (1.0 + QUADRATURE_SLACK)
    if np.any(excess > 0) or np.any(values < 0):
        j, i = np.unravel_index(int(np.argmax(excess)), excess.shape)
        raise EnvelopeViolation(f"{what} leaves the ball", slice=int(j), node=int(i),
                                t=float(params.times[j]), r=float(params.propagator.grid.nodes[i]),
                                ratio=float(values[j, i] / env[j, i]) if env[j, i] > 0 else math.inf)


def apply_T(m: ModelManifold, p: float, u0: InitialData, u: SpaceTimeField,
            params: BallParams, check: bool = True) -> SpaceTimeField:
    """One application of the mild-solution operator."""
    _check_manifold(m, params)
    if check:
        _check_envelope(u.values, params, "input field")
    u0v = _realize_u0(u0, params)
    Tu = heat_term(u0v, params) + duhamel(np.maximum(u.values, 0.0) ** p, params)
    if check:
        _check_envelope(Tu, params, "T u")
    return _field(params, Tu)


@dataclass
class FixedPoint:
    solution: SpaceTimeField
    history: list
    residual: float
    iterations: int
    monotone: bool

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "final_residual": self.residual,
                "contraction_history": self.history, "monotone": self.monotone}


def iterate_to_fixed_point(m: ModelManifold, p: float, u0: InitialData, params: BallParams,
                           tol: Optional[float] = None, max_iter: int = 200) -> FixedPoint:
    """Picard iteration from zero until successive iterates differ by ``<= tol``."""
    _check_manifold(m, params)
    tol = 1e-10 if tol is None else tol
    u0v = _realize_u0(u0, params)
    heat = heat_term(u0v, params)
    prev = np.zeros_like(heat)
    cur = heat.copy()
    history: list = []
    monotone = True
    d_prev = float(np.max(np.abs(cur - prev)))
    above = 0
    it = 1
    while d_prev > tol:
        if it >= max_iter:
            raise NoContraction("iteration limit reached", iterations=it, distance=d_prev)
        nxt = heat + duhamel(cur ** p, params)
        _check_envelope(nxt, params, "iterate")
        monotone &= bool(np.all(nxt >= cur - 1e-14 * np.maximum(1.0, np.abs(cur))))
        d = float(np.max(np.abs(nxt - cur)))
        factor = d / d_prev if d_prev > 0 else 0.0
        history.append(factor)
        above = above + 1 if factor > 1.0 else 0
        if above >= 3:
            raise NoContraction("successive distances grew three times in a row",
                                history=history)
        prev, cur, d_prev = cur, nxt, d
        it += 1
    residual = float(np.max(np.abs(heat + duhamel(cur ** p, params) - cur)))
    log.debug("picard converged in %d iterations, residual %.3e", it, residual)
    return FixedPoint(_field(params, cur), history, residual, it, monotone)


def contraction_factor(m: ModelManifold, p: float, u1: SpaceTimeField, u2: SpaceTimeField,
                       params: BallParams) -> float:
    """``|T u1 - T u2|_inf / |u1 - u2|_inf``; the ``u0`` term cancels."""
    _check_manifold(m, params)
    _check_envelope(u1.values, params, "u1")
    _check_envelope(u2.values, params, "u2")
    diff = u1.values - u2.values
    dist = float(np.max(np.abs(diff)))
    if dist == 0.0:
        raise ZeroDistance("u1 and u2 coincide")
    dp = u1.values ** p - u2.values ** p
    mx = np.maximum(u1.values, u2.values) ** (p - 1.0)
    lhs, rhs = np.abs(dp), p * mx * np.abs(diff)
    if np.any(lhs > rhs * (1.0 + 1e-12) + 1e-300):
        raise ValidationError("mean-value bound on u^p failed")
    return float(np.max(np.abs(duhamel(dp, params)))) / dist


def random_ball_pair(params: BallParams, rng: np.random.Generator):
    env = params.envelope
    a = _field(params, env * rng.uniform(0.0, 1.0, env.shape))
    b = _field(params, env * rng.uniform(0.0, 1.0, env.shape))
    return a, b


def cross_check(m: ModelManifold, p: float, u0: InitialData, fixed: FixedPoint,
                t_max: float = 10.0, N: int = 2400, dt_max: float = 0.005) -> dict:
    """Compare the fixed point with a direct physical-frame simulation.

    Returns the largest sup-relative difference over the slices with
    ``t <= t_max``.
    """
    from .semilinear import PHYSICAL, SolverControls, simulate

    times = [float(t) for t in fixed.solution.times if t <= t_max]
    grid = fixed.solution.grid
    R = min(grid.R, 60.0)
    ctl = SolverControls(frame=PHYSICAL, N=N, R=R, dt_max=dt_max, horizon=max(times),
                         snapshot_times=tuple(times[1:]), record_every=10 ** 9)
    out = simulate(m, p, u0, ctl)
    nodes = out.diagnostics["nodes"]
    worst = 0.0
    rows = []
    for snap, t in zip(out.diagnostics["snapshots"], times):
        pic = np.interp(nodes, grid.nodes, fixed.solution.values[times.index(t)])
        ref = snap["values"]
        rel = float(np.max(np.abs(pic - ref)) / np.max(ref))
        rows.append({"t": t, "sup_relative_difference": rel})
        worst = max(worst, rel)
    return {"max_sup_relative_difference": worst, "per_slice": rows, "outcome": out.kind}
