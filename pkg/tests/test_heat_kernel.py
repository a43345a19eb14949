from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fujita_lab.errors import BoundaryContamination, ResolutionError, ValidationError
from fujita_lab.heat_kernel import (
    DiffusionOperator,
    GridControls,
    RadialGrid,
    gaussian_kernel,
    kernel_at_origin,
    semigroup_defect,
    verify_condition_H,
)
from fujita_lab.manifold import builtin, euclidean, sphere_area

COARSE = GridControls(N=512, R=40.0)
WIDE = GridControls(N=1024, R=80.0)


@pytest.fixture(scope="module")
def flat_ops():
    return {n: DiffusionOperator.from_controls(euclidean(n, 1e6), COARSE) for n in (1, 2, 3)}


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("t", [0.25, 1.0, 4.0])
def test_pole_value_matches_gaussian(flat_ops, n, t):
    P = kernel_at_origin(euclidean(n, 1e6), t, op=flat_ops[n])
    assert P.values.max() == pytest.approx((4 * math.pi * t) ** (-n / 2), rel=0.02)
    assert P.mass(flat_ops[n].weights) <= 1 + 1e-6


def test_second_order_refinement():
    m = euclidean(2, 1e6)
    errs = []
    for N in (256, 512, 1024):
        P = kernel_at_origin(m, 1.0, GridControls(N=N, R=40.0))
        errs.append(abs(P.values[0] - gaussian_kernel(2, 1.0, P.grid.nodes[0])))
    # frozen from a 1024/2048/4096 run: ratios 4.0003 and 4.0002
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


@pytest.mark.parametrize("n", [1, 2, 3])
def test_condition_H_ratio_is_constant(flat_ops, n):
    m = euclidean(n, 1e6)
    rep = verify_condition_H(m, [0.25, 1.0, 4.0, 25.0], WIDE)
    exact = (4 * math.pi) ** (-n / 2) * sphere_area(n) / n
    assert rep.bounded
    assert np.allclose(rep.sup_ratio, exact, rtol=0.02)
    assert max(rep.sup_ratio) / min(rep.sup_ratio) <= 1.10


def test_condition_H_euclidean3_value(flat_ops):
    # (4 pi)^{-3/2} * 4 pi / 3
    rep = verify_condition_H(euclidean(3, 1e6), [1.0], op=flat_ops[3])
    assert rep.C1 == pytest.approx(0.0940315, rel=0.01)


def test_condition_H_power4_bounded():
    m, _ = builtin("power-4")
    rep = verify_condition_H(m, [0.25, 2.5, 25.0], WIDE)
    assert rep.bounded
    assert max(rep.sup_ratio) / min(rep.sup_ratio) < 10.0


def test_semigroup_defect(flat_ops):
    m = euclidean(2, 1e6)
    d = semigroup_defect(m, 1.0, 1.0, op=flat_ops[2])
    P2 = kernel_at_origin(m, 2.0, op=flat_ops[2]).values.max()
    assert d / P2 <= 1e-3


@given(st.floats(0.3, 6.0), st.floats(0.2, 3.0), st.floats(0.05, 4.0))
def test_positivity_and_mass(t, sigma, amp):
    m, _ = builtin("borderline-log")
    op = DiffusionOperator(m, RadialGrid.uniform(30.0, 256))
    u0 = amp * np.exp(-op.grid.nodes ** 2 / sigma ** 2)
    u = op.propagate(u0, t)
    assert np.all(u >= 0)
    assert op.mass(u) <= op.mass(u0) * (1 + 1e-6)


@given(st.floats(1.0, 1.05))
def test_graded_grid_is_monotone(rho):
    g = RadialGrid.build(40.0, 300, rho)
    assert np.all(np.diff(g.faces) > 0)
    assert g.faces[0] == 0.0 and g.R == pytest.approx(40.0)


def test_guards(flat_ops):
    m = euclidean(2, 1e6)
    with pytest.raises(ValidationError):
        kernel_at_origin(m, -1.0, op=flat_ops[2])
    with pytest.raises(ResolutionError):
        kernel_at_origin(m, 1e-6, op=flat_ops[2])
    with pytest.raises(BoundaryContamination):
        kernel_at_origin(m, 60.0, op=flat_ops[2])
    with pytest.raises(ValidationError):
        GridControls(R=50.0).grid(euclidean(2, 10.0))
    with pytest.raises(ValidationError):
        flat_ops[2].propagate(np.full(512, np.nan), 1.0)
