from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fujita_lab.errors import BudgetExhausted, ValidationError
from fujita_lab.heat_kernel import RadialGrid
from fujita_lab.manifold import builtin, euclidean
from fujita_lab.semilinear import (
    BLOW_UP,
    GLOBAL,
    UNDETERMINED,
    InitialData,
    SolverControls,
    _unbias_rate,
    simulate,
    sweep_exponent,
)


@pytest.fixture(scope="module")
def line():
    return builtin("euclidean-1")[0]


@pytest.fixture(scope="module")
def plane():
    return builtin("euclidean-2")[0]


def test_zero_data_is_degenerate_global(line):
    out = simulate(line, 2.0, InitialData.gaussian(0.0))
    assert out.kind == GLOBAL and out.details["degenerate"]


def test_subcritical_bump_blows_up(line):
    out = simulate(line, 2.0, InitialData.bump(0.1, 1.0))
    assert out.kind == BLOW_UP
    assert out.details["t_star"] == pytest.approx(331.23, rel=0.01)


def test_supercritical_small_gaussian_decays(line):
    out = simulate(line, 4.0, InitialData.gaussian(0.01, 1.0))
    assert out.kind == GLOBAL
    # self-similar rate 1/(p-1) - alpha/2 = 1/3 - 1/2
    assert out.details["tail_rate"] == pytest.approx(-1 / 6, abs=2e-3)
    decay = out.details["sup_decay"]
    assert decay[-1] < decay[0]


@pytest.mark.parametrize("name, p, rate", [
    ("euclidean-1", 3.05, 1 / 2.05 - 0.5),
    ("power-4", 1.55, 1 / 0.55 - 2.0),
])
def test_tail_rate_matches_heat_decay(name, p, rate):
    m, _ = builtin(name)
    out = simulate(m, p, InitialData.gaussian(1e-4, 1.0))
    assert out.kind == GLOBAL
    assert out.details["tail_rate"] == pytest.approx(rate, abs=3e-3)


def test_unbias_inverts_backward_euler():
    mu, c, ds = -0.3, 0.8, 0.02
    raw = math.log(1.0 / (1.0 - (mu - c) * ds)) / ds + c
    assert _unbias_rate(raw, c, ds) == pytest.approx(mu, abs=1e-12)


def test_ode_limit_blowup_time():
    # wide flat data: u' = u^2 from u = 2 blows up at t = 1/2
    m = euclidean(1, 1e4)
    ctl = SolverControls(frame="physical", N=4000, R=200.0)
    out = simulate(m, 2.0, InitialData.gaussian(2.0, 10.0), ctl)
    assert out.kind == BLOW_UP
    assert out.details["t_star"] == pytest.approx(0.5, rel=0.01)


@pytest.mark.parametrize("name, p", [("euclidean-1", 2.0), ("euclidean-2", 1.5), ("power-4", 1.3)])
def test_blowup_time_stable_under_refinement(name, p):
    m, _ = builtin(name)
    t = [simulate(m, p, InitialData.gaussian(1.0), SolverControls(N=N)).details["t_star"] for N in (960, 1920)]
    assert abs(t[0] - t[1]) <= 0.10 * t[1]


@pytest.mark.parametrize("name, p", [("euclidean-1", 3.2), ("euclidean-2", 2.2), ("power-4", 1.8)])
def test_step_halving_changes_curve_little(name, p):
    m, _ = builtin(name)
    u0 = InitialData.gaussian(0.01)
    a = simulate(m, p, u0, SolverControls(dt_max=0.01, record_every=25))
    b = simulate(m, p, u0, SolverControls(dt_max=0.005, record_every=50))
    assert a.kind == b.kind == GLOBAL
    ha, hb = a.diagnostics["history"], b.diagnostics["history"]
    k = min(len(ha["s"]), len(hb["s"]))
    assert np.allclose(ha["s"][:k], hb["s"][:k], atol=1e-8)
    diff = np.max(np.abs(np.subtract(ha["sup"][:k], hb["sup"][:k]))) / max(ha["sup"])
    assert diff <= 0.01


def test_grid_too_coarse_demotes(line):
    out = simulate(line, 3.2, InitialData.gaussian(1.0), SolverControls(N=240))
    assert out.kind == UNDETERMINED
    assert out.diagnostics["grid_too_coarse"]


@settings(max_examples=12)
@given(st.floats(0.01, 0.5), st.floats(1.0, 3.0), st.floats(1.3, 3.0), st.sampled_from(["self-similar", "physical"]))
def test_comparison_in_initial_data(amp, scale, p, frame):
    m = euclidean(2, 1e4)
    # a non-binding reaction clock keeps both runs on the same time steps
    ctl = SolverControls(frame=frame, N=240, R=24.0, dt_max=0.01, reaction_clock=1e12,
                         horizon=1.0, snapshot_times=(0.25, 0.5, 1.0))
    lo = simulate(m, p, InitialData.gaussian(amp), ctl)
    hi = simulate(m, p, InitialData.gaussian(amp * scale), ctl)
    for a, b in zip(lo.diagnostics["snapshots"], hi.diagnostics["snapshots"]):
        assert a["t"] == b["t"]
        assert np.all(a["values"] <= b["values"] * (1 + 1e-12) + 1e-300)


def test_envelope_diagnostic(plane):
    ctl = SolverControls(frame="physical", N=400, R=40.0, horizon=5.0, envelope_delta=2.0)
    out = simulate(plane, 3.0, InitialData.gaussian(0.05), ctl)
    env = out.diagnostics["envelope"]
    assert env["lambda"] > 0 and env["max_ratio"] >= 1.0


def test_initial_data_validation():
    with pytest.raises(ValidationError):
        InitialData.gaussian(-1.0)
    with pytest.raises(ValidationError):
        InitialData.gaussian(1.0, 30.0).realize(RadialGrid.uniform(40.0, 200), np.ones(200))
    u = InitialData("table", table_r=(0.0, 1.0, 2.0), table_u=(1.0, 0.5, 0.0))
    assert u(np.array([0.5]))[0] == pytest.approx(0.75)
    assert InitialData.bump(2.0, 1.0)(np.array([0.0, 1.0]))[0] == pytest.approx(2.0)


def test_sweep_unbracketed(plane):
    res = sweep_exponent(plane, 2.6, 3.0, budget=8)
    assert res.status == "unbracketed" and res.bracket is None
    assert res.calls == 6


def test_sweep_budget_exhausted_in_parallel(line):
    with pytest.raises(BudgetExhausted) as exc:
        sweep_exponent(line, 2.0, 4.0, budget=8, workers=2)
    assert exc.value.exit_code == 4
    assert len(exc.value.details["table"]) == 2


def test_sweep_power4_brackets_derived_threshold():
    m, fam = builtin("power-4")
    res = sweep_exponent(m, 1.2, 2.0, budget=40, width=0.1)
    assert res.status == "ok"
    a, b = res.bracket
    # p* = 1 + 2 / alpha1 from the criterion module
    assert abs(a - 1.5) <= 0.15 and abs(b - 1.5) <= 0.15
    assert res.calls <= 40
