import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critlab.discretize import build_discrete_operator
from critlab.eigen import (DomainPolicy, EigenSolverError, MonotonicityViolation,
                           dirichlet_source_solve, eigen_curve, principal_eigenpair)
from critlab.fields import BallIndicator
from critlab.grid import make_grid
from critlab.operators import OperatorSpec
from critlab.scenarios import get_scenario, scenario_library

LAP1 = OperatorSpec.build(1)


def _problem(spec, shape, h, R, inner=0.0):
    return build_discrete_operator(spec, make_grid(spec.d, shape, h, R, inner))


def test_dirichlet_eigenvalue_interval():
    pair = principal_eigenpair(_problem(LAP1, "interval", 1 / 128, 1.0))
    assert pair.lam == pytest.approx(-(math.pi / 2) ** 2, rel=1e-4)
    assert pair.psi.min() > 0 and pair.psi.max() == pytest.approx(1.0)
    lo, hi = pair.bracket
    assert lo <= pair.lam <= hi


def test_second_order_refinement():
    exact = -(math.pi / 2) ** 2
    errs = [abs(principal_eigenpair(_problem(LAP1, "interval", h, 1.0)).lam - exact)
            for h in (1 / 16, 1 / 32, 1 / 64, 1 / 128)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(3.0 <= q <= 5.0 for q in ratios), ratios


def test_residual_within_tolerance():
    spec = OperatorSpec.build(2, b=["-0.3*x1", "0.2"], V="exp(-r^2)")
    p = _problem(spec, "ball", 0.25, 3.0)
    pair = principal_eigenpair(p, tol=1e-11)
    res = np.abs(p.A @ pair.psi - pair.lam * pair.psi).max() / np.abs(pair.psi).max()
    assert res <= 1e-8
    assert pair.residual <= 1e-8


@pytest.mark.parametrize("c", [-2.0, 0.7, 5.0])
def test_shift_covariance(c):
    p = _problem(OperatorSpec.build(2, V="0.5*exp(-r)", b=["0.1", "-x2"]), "ball", 0.25, 2.5)
    a = principal_eigenpair(p, tol=1e-12)
    b = principal_eigenpair(p.shifted(c), tol=1e-12)
    assert b.lam - a.lam == pytest.approx(c, abs=1e-10)
    np.testing.assert_allclose(b.psi, a.psi, atol=1e-8)


def test_direct_and_multigrid_agree():
    p = _problem(OperatorSpec.build(3), "ball", 0.4, 4.0)
    a = principal_eigenpair(p, method="direct")
    b = principal_eigenpair(p, method="amg")
    assert a.lam == pytest.approx(b.lam, abs=1e-9)


def test_nonsymmetric_perron_vector_positive():
    spec = OperatorSpec.build(2, b=["2", "-1 + x1"], V="sin(x1)")
    pair = principal_eigenpair(_problem(spec, "box", 0.2, 2.0))
    assert pair.psi.min() > 0


def test_positive_offdiagonal_rejected():
    import scipy.sparse as sp

    A = sp.csr_matrix(np.array([[-2.0, -1.0], [1.0, -2.0]]))
    with pytest.raises((EigenSolverError, ValueError)):
        principal_eigenpair(A)


def test_eigenvector_dump_csv():
    pair = principal_eigenpair(_problem(LAP1, "interval", 0.25, 1.0))
    lines = pair.dump_csv().splitlines()
    assert lines[0] == "x1,psi" and len(lines) == 1 + len(pair.psi)


# curves ------------------------------------------------------------------

def test_laplace_2d_curve_increases_to_zero():
    curve = eigen_curve(OperatorSpec.build(2), [4, 8, 16, 32], DomainPolicy("ball", 0.5))
    v = curve.values
    assert np.all(np.diff(v) >= 0) and v[-1] < 0
    lo, hi = curve.bracket
    assert lo <= 0 <= hi and hi - lo < 5e-2
    assert abs(curve.lam_star) < 5e-2
    assert curve.to_csv().splitlines()[0] == "R,h,lambda_R,residual"


def test_one_dimensional_scaling_law():
    curve = eigen_curve(LAP1, [1.0, 2.0, 4.0], DomainPolicy("ball", 1 / 128))
    v = curve.values
    np.testing.assert_allclose(v, -(math.pi / (2 * np.array([1.0, 2.0, 4.0]))) ** 2, rtol=1e-4)
    assert v[1] / v[0] == pytest.approx(0.25, rel=1e-4)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3))
def test_constant_potential_shifts_curve(c):
    pol = DomainPolicy("ball", 0.5)
    base = eigen_curve(OperatorSpec.build(2), [2, 4], pol)
    shifted = eigen_curve(OperatorSpec.build(2, V=c), [2, 4], pol)
    np.testing.assert_allclose(shifted.values, base.values + c, atol=1e-9)
    assert shifted.bracket_width == pytest.approx(base.bracket_width, abs=1e-9)


def test_radii_validated():
    with pytest.raises(ValueError):
        eigen_curve(LAP1, [2.0])
    with pytest.raises(ValueError):
        eigen_curve(LAP1, [2.0, 1.0])


def test_monotonicity_violation_detected():
    # changing h with R breaks the fixed-spacing premise: the coarse lattice
    # puts its Dirichlet nodes at +-1.2, beyond the nominal radius
    pol = DomainPolicy("ball", lambda R: 0.6 if R < 1.02 else 0.01)
    with pytest.raises(MonotonicityViolation) as exc:
        eigen_curve(LAP1, [1.0, 1.05], pol)
    assert exc.value.radii == (1.0, 1.05)


@pytest.mark.parametrize("sc", scenario_library(), ids=lambda s: s.name)
def test_curves_nondecreasing_for_library(sc):
    h = sc.h if sc.d == 1 else 0.5
    inner = sc.resolved_inner_radius(4.0) if sc.shape == "annulus" else 0.0
    radii = [inner + 1.5, inner + 2.5, inner + 4.0] if sc.shape == "annulus" else [1.5, 2.5, 4.0]
    curve = eigen_curve(sc.spec, radii, DomainPolicy(sc.shape, h, inner))
    assert np.all(np.diff(curve.values) >= -1e-9)


def test_hardy_ground_state_residual_small():
    sc = get_scenario("hardy-3d")
    p = _problem(sc.spec, "annulus", 0.1, 2.0, 0.5)
    res = p.apply_function(lambda x: np.linalg.norm(x, axis=1) ** -0.5)
    rad = np.linalg.norm(p.grid.points, axis=1)
    inner = (rad > 1.0) & (rad < 1.5)
    assert np.abs(res[inner]).max() < 2e-2


# source problem ----------------------------------------------------------

def _phi_exact(x):
    x = np.abs(x)
    return np.where(x < 1, 1 - math.exp(-1) * np.cosh(x), math.sinh(1) * np.exp(-x))


def test_source_solve_matches_closed_form():
    errs = []
    for h in (0.1, 0.05, 0.025):
        p = _problem(LAP1, "interval", h, 12.0)
        phi = dirichlet_source_solve(p, 0.0, 1.0, BallIndicator((0.0,), 1.0))
        assert phi.min() > 0
        errs.append(np.abs(phi - _phi_exact(p.grid.points[:, 0])).max())
    assert errs[-1] < 1e-3
    assert errs[0] / errs[1] > 3 and errs[1] / errs[2] > 3


def test_source_solve_resolvent_monotone():
    p = _problem(OperatorSpec.build(2), "ball", 0.25, 4.0)
    B = BallIndicator((0.0, 0.0), 1.0)
    a = dirichlet_source_solve(p, 0.0, 1.0, B)
    b = dirichlet_source_solve(p, 0.0, 2.0, B)
    assert np.all(b < a)


def test_source_solve_zero_source_and_validation():
    p = _problem(LAP1, "interval", 0.1, 2.0)
    np.testing.assert_array_equal(dirichlet_source_solve(p, 0.0, 1.0, np.zeros(p.n)),
                                  np.zeros(p.n))
    with pytest.raises(ValueError):
        dirichlet_source_solve(p, 0.0, 0.0, BallIndicator((0.0,), 1.0))
    lam = principal_eigenpair(p).lam
    with pytest.raises(EigenSolverError):
        dirichlet_source_solve(p, lam - 3.0, 1.0, BallIndicator((0.0,), 1.0))
