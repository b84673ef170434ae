import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critlab.discretize import MonotonicityError, build_discrete_operator
from critlab.grid import GridError, make_grid
from critlab.operators import OperatorSpec
from critlab.scenarios import scenario_library


def test_one_dimensional_stencil_rows():
    g = make_grid(1, "interval", 0.5, 1.0)
    np.testing.assert_allclose(g.points.ravel(), [-0.5, 0.0, 0.5])
    A = build_discrete_operator(OperatorSpec.build(1), g).A.toarray()
    np.testing.assert_array_equal(A[1], [4.0, -8.0, 4.0])
    assert A[0, 0] == -8.0 and A[0, 1] == 4.0


def test_upwind_uses_forward_difference_for_positive_drift():
    g = make_grid(1, "interval", 0.5, 1.0)
    p = build_discrete_operator(OperatorSpec.build(1, b=[1.0]), g)
    assert np.all(p.upwind[:, 0] == 1)
    # forward difference adds b/h to the right neighbour only
    np.testing.assert_array_equal(p.A.toarray()[1], [4.0, -10.0, 6.0])


def test_upwind_follows_sign_per_node():
    g = make_grid(1, "interval", 0.5, 1.0)
    p = build_discrete_operator(OperatorSpec.build(1, b=["-x1"]), g)
    assert p.upwind[:, 0].tolist() == [1, 0, -1]


@pytest.mark.parametrize("sc", scenario_library(), ids=lambda s: s.name)
def test_m_matrix_structure_and_row_consistency(sc):
    R = min(sc.radius, 4.0)
    inner = sc.resolved_inner_radius(R)
    if sc.shape == "annulus" and inner >= R - 1:
        R = inner + 2.0
    h = 0.25 if sc.d < 3 else 0.5
    g = make_grid(sc.d, sc.shape if sc.d > 1 or sc.shape == "annulus" else "interval", h, R,
                  inner if sc.shape == "annulus" else 0.0)
    p = build_discrete_operator(sc.spec, g)
    assert p.offdiagonal_min() >= 0
    # (A - diag V) 1 = 0 where the whole stencil is interior
    L = p.A - __import__("scipy.sparse", fromlist=["diags"]).diags(p.V)
    row = L @ np.ones(p.n)
    full = np.asarray(p.B.sum(axis=1)).ravel() == 0
    assert full.any()
    np.testing.assert_allclose(row[full], 0.0, atol=1e-9 * np.abs(p.A).max())


def test_mixed_derivative_within_dominance_is_monotone():
    spec = OperatorSpec.build(2, a=[[1.0, 0.5], [0.5, 2.0]])
    p = build_discrete_operator(spec, make_grid(2, "box", 0.25, 1.0))
    assert p.offdiagonal_min() >= 0


def test_cross_diffusion_dominance_reported():
    spec = OperatorSpec.build(2, a=[[1.0, 1.5], [1.5, 2.0]])
    with pytest.raises(MonotonicityError) as exc:
        build_discrete_operator(spec, make_grid(2, "box", 0.25, 1.0))
    assert exc.value.node is not None


def test_too_coarse_grid():
    with pytest.raises(GridError):
        make_grid(1, "interval", 1.0, 1.0)
    with pytest.raises(GridError):
        make_grid(2, "ball", 0.0, 1.0)


def test_annulus_requires_hole_inside():
    with pytest.raises(GridError):
        make_grid(3, "annulus", 0.5, 2.0, 2.5)


def test_annulus_excludes_inner_ball():
    g = make_grid(3, "annulus", 0.25, 2.0, 0.5)
    assert np.all(np.linalg.norm(g.points, axis=1) > 0.5)
    assert np.all(np.linalg.norm(g.points, axis=1) < 2.0)


def test_shift_changes_only_diagonal():
    g = make_grid(2, "ball", 0.5, 3.0)
    p = build_discrete_operator(OperatorSpec.build(2, V="exp(-r)"), g)
    q = p.shifted(1.5)
    np.testing.assert_allclose((q.A - p.A).toarray(), 1.5 * np.eye(p.n))
    np.testing.assert_allclose(q.V, p.V + 1.5)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 3.0))
def test_random_drift_keeps_sign_structure(b1, b2, a):
    spec = OperatorSpec.build(2, a=a, b=[f"{b1!r}*x2", f"{b2!r} - x1"])
    p = build_discrete_operator(spec, make_grid(2, "ball", 0.5, 3.0))
    assert p.offdiagonal_min() >= 0
