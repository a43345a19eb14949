"""Time stepping of ``u_t = Delta u + u^p`` with blow-up / decay detection.

Two frames share one IMEX step (implicit FV diffusion, then the exact flow of
the reaction ODE):

* ``physical``: ``u(r, t)`` on a fixed radial grid, horizon ``T``.
* ``self-similar`` (default): ``w(y, s) = (t+1)^(1/(p-1)) u(y sqrt(t+1), t)``
  with ``s = ln(t+1)``, which solves

      w_s = (1/rho) (rho w_y)_y + w/(p-1) + w^p,  rho = V'(e^(s/2) y) e^(y^2/4).

  Heat decay becomes exponential decay at rate ``alpha/2 - 1/(p-1)`` for
  volume ``~ r^alpha``, so the sign of the tail rate separates the two sides
  of the Fujita exponent in ``s``-horizons of a few hundred, i.e. physical
  times near ``e^400`` that no fixed physical grid could reach.

Blow-up is declared in the frame's own variables: ``sup >= U_max`` while the
reaction clock has forced the step below ``dt_min``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import _tridiag
from .criterion import check_p
from .errors import BudgetExhausted, ValidationError
from .heat_kernel import DiffusionOperator, RadialGrid
from .manifold import ModelManifold

BLOW_UP = "BlowUp"
GLOBAL = "GlobalEvidence"
UNDETERMINED = "Undetermined"

SELF_SIMILAR = "self-similar"
PHYSICAL = "physical"


@dataclass(frozen=True)
class InitialData:
    """Radial initial profile: ``gaussian``, ``bump`` (C-infinity, compact) or ``table``."""

    kind: str = "gaussian"
    amplitude: float = 1.0
    width: float = 1.0
    table_r: tuple = ()
    table_u: tuple = ()

    def __post_init__(self):
        if self.kind not in ("gaussian", "bump", "table"):
            raise ValidationError("unknown initial-data kind", kind=self.kind)
        if self.amplitude < 0:
            raise ValidationError("initial data must be nonnegative", amplitude=self.amplitude)
        if self.kind != "table" and not self.width > 0:
            raise ValidationError("width must be positive", width=self.width)
        if self.kind == "table":
            if len(self.table_r) != len(self.table_u) or len(self.table_r) < 2:
                raise ValidationError("table needs matching r and u columns")
            if min(self.table_u) < 0:
                raise ValidationError("initial data must be nonnegative")

    @classmethod
    def gaussian(cls, amplitude: float, sigma: float = 1.0) -> "InitialData":
        return cls("gaussian", amplitude, sigma)

    @classmethod
    def bump(cls, amplitude: float, radius: float = 1.0) -> "InitialData":
        return cls("bump", amplitude, radius)

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-0.5 * (r / self.width) ** 2)
        if self.kind == "bump":
            x = r / self.width
            out = np.zeros_like(r)
            inside = x < 1.0
            out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - x[inside] ** 2))
            return out
        return np.interp(r, self.table_r, self.table_u, right=0.0)

    @property
    def is_zero(self) -> bool:
        if self.kind == "table":
            return max(self.table_u) == 0.0
        return self.amplitude == 0.0

    def realize(self, grid: RadialGrid, weights: Optional[np.ndarray] = None) -> np.ndarray:
        u = self(grid.nodes)
        if weights is not None and u.any():
            far = grid.nodes > 0.5 * grid.R
            if float(np.dot(weights[far], u[far])) > 1e-10:
                raise ValidationError("initial data not concentrated inside R/2")
        return u

    def scaled(self, amplitude: float) -> "InitialData":
        if self.kind == "table":
            k = amplitude / max(self.table_u)
            return replace(self, table_u=tuple(k * v for v in self.table_u))
        return replace(self, amplitude=amplitude)


@dataclass(frozen=True)
class SolverControls:
    frame: str = SELF_SIMILAR
    N: int = 960
    R: float = 24.0             # outer radius (y in the self-similar frame)
    rho: float = 1.0            # grading, physical frame only
    dt_max: float = 0.01        # frame-time step cap
    reaction_clock: float = 0.1
    U_max: float = 1e8
    dt_min: float = 1e-12
    horizon: Optional[float] = None   # physical T, or s-horizon in the self-similar frame
    rate_tol: float = 0.01      # self-similar decay rate needed for GlobalEvidence
    onset_factor: float = 10.0
    min_peak_cells: int = 8
    record_every: int = 25
    envelope_delta: Optional[float] = None
    snapshot_times: tuple = ()  # frame times at which full profiles are kept

    def __post_init__(self):
        if self.frame not in (SELF_SIMILAR, PHYSICAL):
            raise ValidationError("frame must be 'self-similar' or 'physical'", frame=self.frame)

    def resolved_horizon(self, u0: InitialData) -> float:
        if self.horizon is not None:
            return float(self.horizon)
        if self.frame == SELF_SIMILAR:
            return 400.0
        return max(100.0, 50.0 * u0.width ** 2)


@dataclass
class Outcome:
    kind: str
    details: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"outcome": self.kind, "details": self.details, "diagnostics": self.diagnostics}

    def history_rows(self):
        h = self.diagnostics.get("history", {})
        cols = list(h)
        return cols, list(zip(*(h[c] for c in cols)))


# -- frames --------------------------------------------------------------------

class _PhysicalFrame:
    linear_rate = 0.0
    varying = False

    def __init__(self, m: ModelManifold, p: float, controls: SolverControls):
        self.op = DiffusionOperator(m, RadialGrid.build(controls.R, controls.N, controls.rho))
        self.grid = self.op.grid
        self.weights = self.op.weights
        self.p = p

    def couplings(self, s: float):
        return self.op.lower, self.op.upper, self.op.absorb

    def time(self, s: float) -> float:
        return s

    def log10_sup_u(self, s, sup_w):
        return math.log10(sup_w) if sup_w > 0 else -math.inf

    def log10_mass(self, s, w):
        m = float(np.dot(self.weights, w))
        return math.log10(m) if m > 0 else -math.inf


class _SelfSimilarFrame:
    varying = True

    def __init__(self, m: ModelManifold, p: float, controls: SolverControls):
        self.m = m
        self.p = p
        self.linear_rate = 1.0 / (p - 1.0)
        self.grid = RadialGrid.uniform(controls.R, controls.N)
        self.varying = not m.is_euclidean
        self.weights = self._weight_factors(0.0)[0]
        self._cache = None

    def _log_rho(self, s, y):
        with np.errstate(divide="ignore"):
            return self.m.log_area(math.exp(0.5 * s) * y) + 0.25 * y ** 2

    def _weight_factors(self, s):
        g = self.grid
        lf = self._log_rho(s, g.faces)
        lc = self._log_rho(s, g.nodes)
        ratio = (np.exp(lf[:-1] - lc) + 4.0 + np.exp(lf[1:] - lc)) / 6.0  # Simpson, relative to node
        return g.widths * ratio, lf, lc

    def couplings(self, s: float):
        if not self.varying and self._cache is not None:
            return self._cache
        g = self.grid
        wrel, lf, lc = self._weight_factors(s)
        # face areas relative to the node on either side
        N = g.N
        gaps = np.diff(g.nodes)
        lower = np.zeros(N)
        upper = np.zeros(N)
        lower[1:] = np.exp(lf[1:-1] - lc[1:]) / (wrel[1:] * gaps)
        upper[:-1] = np.exp(lf[1:-1] - lc[:-1]) / (wrel[:-1] * gaps)
        absorb = np.zeros(N)
        absorb[-1] = math.exp(lf[-1] - lc[-1]) / (wrel[-1] * (g.faces[-1] - g.nodes[-1]))
        out = (lower, upper, absorb)
        if not self.varying:
            self._cache = out
        return out

    def time(self, s: float) -> float:
        return math.expm1(s) if s < 709.0 else math.inf

    def log10_sup_u(self, s, sup_w):
        if sup_w <= 0:
            return -math.inf
        return math.log10(sup_w) - s / ((self.p - 1.0) * math.log(10.0))

    def log10_mass(self, s, w):
        # physical mass: tau^(-1/(p-1)) * sqrt(tau) * int w(y) V'(sqrt(tau) y) dy
        pos = w > 0
        if not pos.any():
            return -math.inf
        g = self.grid
        with np.errstate(divide="ignore"):
            la = self.m.log_area(math.exp(0.5 * s) * g.nodes)
        lm = logsumexp(la[pos] + np.log(g.widths[pos]) + np.log(w[pos]))
        lm += 0.5 * s - s / (self.p - 1.0)
        return lm / math.log(10.0)


def _reaction(w: np.ndarray, p: float, c: float, ds: float) -> np.ndarray:
    """Exact flow of ``w' = c w + w^p`` over ``ds`` (inf where it blows up)."""
    q = p - 1.0
    if c == 0.0:
        growth, k = 1.0, q * ds
    else:
        growth, k = math.exp(c * ds), math.expm1(q * c * ds) / c
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        bracket = 1.0 - k * w ** q
        out = np.where(bracket > 0, w * growth * bracket ** (-1.0 / q), np.inf)
    out[w == 0] = 0.0
    return out


def _fit_rate(s: np.ndarray, logsup: np.ndarray) -> float:
    if s.size < 3 or not np.all(np.isfinite(logsup)):
        return math.nan
    return float(np.polyfit(s, logsup, 1)[0])


def _unbias_rate(raw: float, c: float, ds: float) -> float:
    """Undo the backward-Euler amplification ``1/(1 - mu ds)`` of a constant-step tail.

    Per step the linear part multiplies by ``e^(c ds) / (1 - mu ds)``; solving
    for ``mu`` turns the fitted discrete rate back into ``mu + c``.
    """
    if ds <= 0:
        return raw
    mu = -math.expm1((c - raw) * ds) / ds
    return mu + c


def _blowup_time(s_hist: Sequence[float], sup_hist: Sequence[float], p: float) -> float:
    """Extrapolate ``sup^(1-p)`` linearly to zero over the final steps."""
    s = np.asarray(s_hist[-12:], dtype=float)
    z = np.asarray(sup_hist[-12:], dtype=float) ** (1.0 - p)
    if s.size < 2 or np.ptp(s) == 0:
        return float(s[-1])
    slope, icpt = np.polyfit(s - s[-1], z, 1)
    if slope >= 0:
        return float(s[-1])
    return float(s[-1] - icpt / slope)


def simulate(m: ModelManifold, p: float, u0: InitialData, controls: Optional[SolverControls] = None) -> Outcome:
    """Integrate to blow-up or the horizon and classify the run."""
    p = check_p(p)
    controls = controls or SolverControls()
    frame = (_SelfSimilarFrame if controls.frame == SELF_SIMILAR else _PhysicalFrame)(m, p, controls)
    grid = frame.grid
    horizon = controls.resolved_horizon(u0)
    w = u0.realize(grid, frame.weights if controls.frame == PHYSICAL else None).astype(float)
    base = {"frame": controls.frame, "p": p, "horizon": horizon, "manifold": m.describe()}

    if u0.is_zero or not w.any():
        return Outcome(GLOBAL, {**base, "degenerate": True, "sup_decay": [0.0]}, {"history": {}})

    q = p - 1.0
    c = frame.linear_rate
    env = _Envelope(frame, w, controls) if controls.envelope_delta and controls.frame == PHYSICAL else None

    s = 0.0
    sup = float(w.max())
    hist = {"t": [], "s": [], "sup": [], "log10_sup_u": [], "log10_mass": [], "dt": []}
    tail_s, tail_sup = [s], [sup]
    onset_level = controls.onset_factor * max(sup, 1.0)
    peak_cells = None
    factor_key = None
    cp = inv = sub = None
    step = 0
    ds = 0.0

    def record():
        hist["t"].append(frame.time(s))
        hist["s"].append(s)
        hist["sup"].append(sup)
        hist["log10_sup_u"].append(frame.log10_sup_u(s, sup))
        hist["log10_mass"].append(frame.log10_mass(s, w))
        hist["dt"].append(ds)

    record()
    snaps = sorted(float(x) for x in controls.snapshot_times if 0.0 < x <= horizon)
    snapshots = [{"t": 0.0, "values": w.copy()}] if controls.snapshot_times else []
    kind = None
    while s < horizon:
        ds = min(controls.dt_max, horizon - s)
        if sup > 0:
            ds = min(ds, controls.reaction_clock / (p * sup ** q))
        if snaps and snaps[0] - s < ds:
            ds = snaps[0] - s
        lower, upper, absorb = frame.couplings(s + ds)
        key = (ds, id(lower)) if not frame.varying else None
        if key is None or key != factor_key:
            sub = -ds * lower
            diag = 1.0 + ds * (lower + upper + absorb)
            cp, inv = _tridiag.factor(sub, diag, -ds * upper)
            factor_key = key
        w = _tridiag.solve_steps(sub, cp, inv, w, 1)
        if env is not None:
            env.step(sub, cp, inv)
        w = _reaction(w, p, c, ds)
        s += ds
        step += 1
        sup = float(w.max())
        tail_s.append(s)
        tail_sup.append(sup)
        if len(tail_s) > 64:
            del tail_s[:-32], tail_sup[:-32]
        if env is not None:
            env.check(w)
        if peak_cells is None and sup >= onset_level:
            peak_cells = int(np.count_nonzero(w >= 0.5 * sup))
        if not math.isfinite(sup) or sup >= 1e300 or (sup >= controls.U_max and ds <= controls.dt_min):
            kind = BLOW_UP
            record()
            break
        if snaps and s >= snaps[0] - 1e-12:
            snapshots.append({"t": snaps.pop(0), "values": w.copy()})
        if step % controls.record_every == 0:
            record()
    else:
        record()

    diagnostics = {"history": hist, "steps": step, "peak_cells_at_onset": peak_cells}
    if env is not None:
        diagnostics["envelope"] = env.summary()
    if snapshots:
        diagnostics["snapshots"] = snapshots
        diagnostics["nodes"] = grid.nodes

    if kind == BLOW_UP:
        finite = [(a, b) for a, b in zip(tail_s, tail_sup) if math.isfinite(b) and b > 0]
        s_star = _blowup_time([a for a, _ in finite], [b for _, b in finite], p)
        details = {**base, "s_star": s_star, "t_star": frame.time(s_star),
                   "sup_history": hist["sup"][-50:]}
        if peak_cells is not None and peak_cells < controls.min_peak_cells:
            diagnostics["grid_too_coarse"] = True
            return Outcome(UNDETERMINED, {**details, "reason": "grid too coarse at blow-up onset"}, diagnostics)
        return Outcome(BLOW_UP, details, diagnostics)

    s_arr = np.asarray(hist["s"])
    sup_arr = np.asarray(hist["sup"])
    half = s_arr >= 0.5 * horizon
    first_max = float(sup_arr[~half].max()) if (~half).any() else float(sup_arr[0])
    last_max = float(sup_arr[half].max())
    below = last_max < first_max
    rate = _fit_rate(s_arr[half], np.log(np.maximum(sup_arr[half], 1e-300)))
    if controls.frame == SELF_SIMILAR and math.isfinite(rate):
        rate = _unbias_rate(rate, c, float(np.median(np.asarray(hist["dt"])[half])))
    details = {**base, "final_sup": float(sup_arr[-1]), "tail_rate": rate,
               "sup_decay": sup_arr[half][:: max(1, half.sum() // 20)].tolist()}
    if controls.frame == SELF_SIMILAR:
        if below and rate <= -controls.rate_tol:
            return Outcome(GLOBAL, details, diagnostics)
        reason = "growing at horizon" if rate >= controls.rate_tol else "stationary in self-similar frame"
        if rate <= -controls.rate_tol:
            reason = "late maximum"
        return Outcome(UNDETERMINED, {**details, "reason": reason}, diagnostics)
    if below:
        return Outcome(GLOBAL, details, diagnostics)
    return Outcome(UNDETERMINED, {**details, "reason": "sup still rising at horizon"}, diagnostics)


class _Envelope:
    """Track ``max u / (lambda P_{t+delta})`` alongside a physical run."""

    def __init__(self, frame: _PhysicalFrame, u0: np.ndarray, controls: SolverControls):
        op = frame.op
        self.P = op.propagate(op.delta(), controls.envelope_delta)
        mask = self.P > 1e-300
        self.lam = float(np.max(u0[mask] / self.P[mask]))
        self.worst = 1.0 if self.lam > 0 else 0.0

    def step(self, sub, cp, inv):
        self.P = _tridiag.solve_steps(sub, cp, inv, self.P, 1)

    def check(self, u):
        mask = self.P > 1e-300
        if mask.any() and self.lam > 0:
            self.worst = max(self.worst, float(np.max(u[mask] / (self.lam * self.P[mask]))))

    def summary(self) -> dict:
        return {"lambda": self.lam, "max_ratio": self.worst}


# -- sweep ------------------------------------------------------------------------

@dataclass
class SweepResult:
    bracket: Optional[tuple]
    table: list
    calls: int
    status: str

    def to_dict(self) -> dict:
        return {"bracket": list(self.bracket) if self.bracket else None,
                "table": self.table, "calls": self.calls, "status": self.status}


def _run_case(args):
    m, p, u0, controls = args
    out = simulate(m, p, u0, controls)
    return out.kind, out.details.get("tail_rate"), out.details.get("t_star")


def sweep_exponent(
    m: ModelManifold,
    p_lo: float,
    p_hi: float,
    budget: int = 40,
    width: float = 0.1,
    amplitudes: Sequence[float] = (1e-4, 1e-2, 1.0),
    u0_family: Optional[Callable[[float], InitialData]] = None,
    controls: Optional[SolverControls] = None,
    workers: int = 1,
) -> SweepResult:
    """Bisect on ``p`` for the switch from "every amplitude blows up" to
    "some amplitude persists".

    A p-value counts as persisting when at least one tested amplitude yields
    GlobalEvidence; the table records, per p, every amplitude's outcome and
    the largest persisting amplitude.
    """
    if not p_lo < p_hi:
        raise ValidationError("need p_lo < p_hi")
    if budget < 8:
        raise ValidationError("budget must allow at least 8 simulate calls", budget=budget)
    u0_family = u0_family or (lambda a: InitialData.gaussian(a, 1.0))
    controls = controls or SolverControls()
    amps = sorted(float(a) for a in amplitudes)
    table: list = []
    calls = 0

    def evaluate(p):
        nonlocal calls
        if calls + len(amps) > budget:
            raise BudgetExhausted("simulation budget exhausted", calls=calls, table=table)
        jobs = [(m, p, u0_family(a), controls) for a in amps]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(_run_case, jobs))
        else:
            results = [_run_case(j) for j in jobs]
        calls += len(amps)
        persisting = [a for a, r in zip(amps, results) if r[0] == GLOBAL]
        row = {
            "p": p,
            "outcomes": {repr(a): r[0] for a, r in zip(amps, results)},
            "tail_rates": {repr(a): r[1] for a, r in zip(amps, results)},
            "largest_global_amplitude": max(persisting) if persisting else None,
            "persists": bool(persisting),
        }
        table.append(row)
        return row["persists"]

    try:
        lo_persists = evaluate(p_lo)
        hi_persists = evaluate(p_hi)
        if lo_persists or not hi_persists:
            return SweepResult(None, table, calls, "unbracketed")
        a, b = p_lo, p_hi
        while b - a > width:
            mid = 0.5 * (a + b)
            if evaluate(mid):
                b = mid
            else:
                a = mid
    except BudgetExhausted as exc:
        exc.details["bracket"] = None
        raise
    table.sort(key=lambda row: row["p"])
    return SweepResult((a, b), table, calls, "ok")
