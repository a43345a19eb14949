"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line (printed and echoed in the
terminal summary) before asserting, so a red criterion still reports its
measured numbers.
"""
from __future__ import annotations

import json
import math
import time

import numpy as np
import pytest

from fujita_lab import cli
from fujita_lab.certificate import a_decay, build_certificate, verify_bounds
from fujita_lab.criterion import DIVERGENT, classify, fujita_exponent
from fujita_lab.heat_kernel import (
    DiffusionOperator,
    GridControls,
    kernel_at_origin,
    semigroup_defect,
    verify_condition_H,
)
from fujita_lab.manifold import VolumeFamily, builtin, check_condition_G, euclidean, make_power_log_manifold
from fujita_lab.picard import (
    PicardControls,
    build_ball,
    contraction_factor,
    cross_check,
    iterate_to_fixed_point,
    random_ball_pair,
    small_data,
)
from fujita_lab.semilinear import BLOW_UP, GLOBAL, UNDETERMINED, InitialData, simulate, sweep_exponent

AMPLITUDES = (1e-4, 1e-2, 1.0)


def report(log, number, ok, text):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
    print(line)
    log.append(line)
    assert ok, line


def test_1_euclidean_threshold_sweeps(acceptance_log):
    parts, ok = [], True
    for n, (lo, hi) in {1: (2.0, 4.0), 2: (1.5, 3.0)}.items():
        m, _ = builtin(f"euclidean-{n}")
        start = time.perf_counter()
        res = sweep_exponent(m, lo, hi, budget=40, width=0.1, amplitudes=AMPLITUDES)
        secs = time.perf_counter() - start
        p_star = 1 + 2 / n
        a, b = res.bracket if res.bracket else (math.nan, math.nan)
        good = (res.status == "ok" and abs(a - p_star) <= 0.15 and abs(b - p_star) <= 0.15
                and res.calls <= 40 and secs <= 600)
        ok &= good
        parts.append(f"n={n} bracket=[{a:.4f}, {b:.4f}] calls={res.calls} {secs:.1f}s")
    report(acceptance_log, 1, ok, "; ".join(parts))


def test_2_dichotomy_consistency(acceptance_log):
    names = ["euclidean-1", "euclidean-2", "euclidean-3", "power-3", "power-4", "borderline-log"]
    contradictions, undetermined, runs = [], 0, 0
    for name in names:
        m, fam = builtin(name)
        p_star = fujita_exponent(fam)
        for shift in (-0.2, 0.0, 0.2):
            p = p_star + shift
            verdict = classify(fam, p).kind
            kinds = [simulate(m, p, InitialData.gaussian(a)).kind for a in AMPLITUDES]
            runs += len(kinds)
            undetermined += kinds.count(UNDETERMINED)
            if verdict == DIVERGENT:
                near = abs(p - p_star) <= 0.1 + 1e-12
                bad = [k for k in kinds if k != BLOW_UP and not (near and k == UNDETERMINED)]
            else:
                bad = [] if GLOBAL in kinds else kinds
            if bad:
                contradictions.append(f"{name}@p={p:.3f}:{verdict}/{kinds}")
    ok = not contradictions
    detail = f"{len(names)} families, {runs} runs, contradictions={len(contradictions)}, undetermined={undetermined}"
    if contradictions:
        detail += " " + "; ".join(contradictions)
    report(acceptance_log, 2, ok, detail)


def test_3_heat_kernel_oracle(acceptance_log):
    worst_diag, worst_mass, worst_defect, worst_ratio = 0.0, 0.0, 0.0, math.inf
    for n in (1, 2, 3):
        m = euclidean(n, 1e6)
        ops = {N: DiffusionOperator.from_controls(m, GridControls(N=N, R=40.0)) for N in (1024, 2048, 4096)}
        for t in (0.25, 1.0, 4.0):
            exact = (4 * math.pi * t) ** (-n / 2)
            errs = []
            for N, op in ops.items():
                P = kernel_at_origin(m, t, op=op)
                errs.append(abs(P.values[0] - exact) / exact)
                worst_mass = max(worst_mass, op.mass(P.values))
            worst_diag = max(worst_diag, errs[-1])
            worst_ratio = min(worst_ratio, errs[0] / errs[1], errs[1] / errs[2])
        op = ops[4096]
        P2 = kernel_at_origin(m, 2.0, op=op).values.max()
        worst_defect = max(worst_defect, semigroup_defect(m, 1.0, 1.0, op=op) / P2)
    ok = worst_diag <= 0.02 and worst_mass <= 1 + 1e-6 and worst_defect <= 1e-3 and worst_ratio >= 3.5
    report(acceptance_log, 3, ok,
           f"max diag err={worst_diag:.2e} max mass={worst_mass:.9f} "
           f"semigroup defect={worst_defect:.2e} min refinement ratio={worst_ratio:.3f}")


def test_4_conditions_H_and_G(acceptance_log):
    spreads, c0_exact = [], True
    for n in (1, 2, 3):
        m = euclidean(n, 1e6)
        rep = verify_condition_H(m, [0.25, 1.0, 4.0, 25.0], GridControls(N=1024, R=80.0))
        spreads.append(max(rep.sup_ratio) / min(rep.sup_ratio) - 1.0)
        G = check_condition_G(m, 0.01, 1e5)
        c0_exact &= G.holds and G.C0 == n - 1
    families = [builtin(name)[0] for name in ("power-3", "power-4", "borderline-log")]
    families += [
        make_power_log_manifold(2, VolumeFamily((1.0,), 4 * math.pi), 1.0, 1e6),
        make_power_log_manifold(3, VolumeFamily((1.0,), 10.0), 1.0, 1e6),
        make_power_log_manifold(2, VolumeFamily((1.5, 2.0), 20.0), None, 1e6),
        make_power_log_manifold(2, VolumeFamily((2.5, -1.0), 5.0), None, 1e6),
        make_power_log_manifold(3, VolumeFamily((3.0, 1.0, 1.0), 1.0), None, 1e6),
        make_power_log_manifold(2, VolumeFamily((6.0,), 1.0), None, 1e6),
    ]
    c0s = [check_condition_G(m, 0.01, m.R_max) for m in families]
    finite = all(g.holds and math.isfinite(g.C0) for g in c0s)
    ok = max(spreads) <= 0.10 and c0_exact and finite
    report(acceptance_log, 4, ok,
           f"H spread over t in [0.25, 25]: {', '.join(f'{s:.2%}' for s in spreads)}; "
           f"G exact C0=n-1: {c0_exact}; {len(c0s)} power-log families finite C0 "
           f"(max {max(g.C0 for g in c0s):.3f}): {finite}")


def test_5_picard_construction(acceptance_log):
    m = euclidean(2, 1e4)
    ball = build_ball(m, 3.0, PicardControls(delta=2.0, J=24))
    c4_err = abs(ball.C4 * 2 * math.pi ** 2 - 1.0)
    rng = np.random.default_rng(0)
    factors = [contraction_factor(m, 3.0, *random_ball_pair(ball, rng), ball) for _ in range(200)]
    u0 = small_data(ball)
    fp = iterate_to_fixed_point(m, 3.0, u0, ball)
    cc = cross_check(m, 3.0, u0, fp, t_max=10.0)
    diff = cc["max_sup_relative_difference"]
    ok = c4_err <= 0.02 and max(factors) <= ball.contraction_bound + 0.05 and diff <= 0.05 and fp.monotone
    report(acceptance_log, 5, ok,
           f"C4 rel err={c4_err:.1e}; max factor={max(factors):.4f} vs bound {ball.contraction_bound:.3f}"
           f" over {len(factors)} pairs; cross-check={diff:.2%}; monotone={fp.monotone}")


def test_6_certificate(acceptance_log):
    m = euclidean(2, 2.0 ** 70)
    closed, jump, lap, dt = 0.0, 0.0, [], []
    for i in (4, 8, 16):
        c = build_certificate(m, 2.0, 1.0, i)
        k = np.arange(i + 1)
        closed = max(closed, abs(c.a - 4 * math.pi / i), float(np.max(np.abs(c.T - (i - k) / i))))
        rep = verify_bounds(c)
        jump = max(jump, rep.max_interface_jump)
        lap.append(rep.C_lap)
        dt.append(rep.C_t)
    bounded = max(lap) / min(lap) <= 1.01 and max(dt) / min(dt) <= 1.01
    prods = [row["a_times_integral"] for row in a_decay(m, 2.0, 1.0, [4, 8, 16]).rows]
    comparable = all(1.0 <= x <= 4 * math.log(2) for x in prods)
    firsts = {r0: a_decay(m, 2.0, r0, [4]).first_i for r0 in (1.0, 2.0, 4.0)}
    reported = all(firsts[r0] == math.ceil(4 * math.pi * r0) for r0 in firsts)
    ok = closed <= 1e-10 and jump <= 1e-12 and bounded and comparable and reported
    report(acceptance_log, 6, ok,
           f"closed-form err={closed:.1e}; interface jump={jump:.1e}; "
           f"C_lap={['%.4f' % x for x in lap]} C_t={['%.4f' % x for x in dt]}; "
           f"a*integral={['%.4f' % x for x in prods]}; first i={firsts}")


def test_7_determinism(tmp_path, acceptance_log):
    configs = {
        "sweep": {"manifold": {"builtin": "euclidean", "dimension": 2},
                  "sweep": {"p_lo": 1.5, "p_hi": 3.0, "width": 0.2}},
        "simulate": {"manifold": {"builtin": "power-4", "dimension": 2}, "problem": {"p": 1.8}},
        "picard": {"manifold": {"builtin": "euclidean", "dimension": 2}, "problem": {"p": 3.0},
                   "picard": {"J": 24, "pairs": 50, "write_field": True}},
        "certificate": {"manifold": {"builtin": "euclidean", "dimension": 2}, "problem": {"p": 2.0}},
        "heat-kernel": {"manifold": {"builtin": "euclidean", "dimension": 3}},
    }
    mismatched, compared = [], 0
    for command, cfg in configs.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        snaps = []
        for _ in range(2):
            out = tmp_path / command
            code = cli.run([command, "--config", str(path), "--out", str(out), "--seed", "11"])
            assert code in (0, 1), code
            snaps.append({f.name: f.read_bytes() for f in sorted(out.iterdir())
                          if f.suffix in (".csv", ".json")})
        compared += len(snaps[0])
        mismatched += [f"{command}/{name}" for name in snaps[0] if snaps[0][name] != snaps[1].get(name)]
    report(acceptance_log, 7, not mismatched,
           f"{compared} CSV/JSON files over {len(configs)} commands, mismatches={mismatched or 0}")
