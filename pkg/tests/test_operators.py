import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critlab.fields import (BallIndicator, Combination, ExprField, as_field, bump, cell_fraction,
                            plateau)
from critlab.operators import (CoefficientError, DispersionField, OperatorSpec,
                               validate_assumptions)
from critlab.scenarios import ScenarioNotFound, get_scenario, scenario_library


def test_laplacian_validation_passes_with_unit_ellipticity():
    rep = validate_assumptions(OperatorSpec.build(2), 4.0, 256)
    assert rep.ok
    assert rep.ellipticity == pytest.approx(1.0)
    assert not rep.V_unbounded


def test_hardy_away_from_origin_passes_and_flags_origin():
    hardy = get_scenario("hardy-3d")
    assert validate_assumptions(hardy.spec, 2.0, 256, inner_radius=0.2).ok
    rep = validate_assumptions(hardy.spec, 2.0, 64)  # origin is sampled
    assert rep.V_unbounded
    assert not rep.passed["potential_locally_bounded"]


def test_indefinite_diffusion_listed():
    spec = OperatorSpec.build(2, a=["min(1, 1 - 3*x1)", "1"])
    rep = validate_assumptions(spec, 1.0, 128)
    assert not rep.passed["positive_definite"]
    pts = np.array(rep.violations["positive_definite"])
    assert len(pts) > 0 and np.all(pts[:, 0] >= 1 / 3 - 1e-12)


def test_nonfinite_drift_reports_point():
    spec = OperatorSpec.build(1, b=["1/x1"])
    with pytest.raises(CoefficientError) as exc:
        validate_assumptions(spec, 1.0, 16)
    assert exc.value.point == (0.0,)


def test_samples_must_be_positive():
    with pytest.raises(ValueError):
        validate_assumptions(OperatorSpec.build(1), 1.0, 0)


def test_affine_growth_ratio_for_ou():
    ou = get_scenario("ou-drift")
    rep = ou.validate()
    assert rep.passed["affine_growth"]
    assert rep.growth_ratio <= np.sqrt(2) + 1e-12


@pytest.mark.parametrize("sc", scenario_library(), ids=lambda s: s.name)
def test_dispersion_squares_to_twice_diffusion(sc, rng):
    pts = rng.uniform(-sc.radius, sc.radius, size=(1000, sc.d))
    pts = pts[np.linalg.norm(pts, axis=1) > max(sc.resolved_inner_radius(), 1e-3)]
    sig = DispersionField(sc.spec)(pts)
    a2 = 2 * sc.spec.diffusion(pts)
    err = np.linalg.norm(sig @ np.swapaxes(sig, 1, 2) - a2, axis=(1, 2))
    assert np.all(err <= 1e-10 * np.linalg.norm(a2, axis=(1, 2)))


def test_dispersion_for_full_matrix(rng):
    spec = OperatorSpec.build(2, a=[["2 + sin(x1)", "0.5*cos(x2)"], ["0.5*cos(x2)", "1.5"]])
    pts = rng.normal(size=(1000, 2))
    sig = DispersionField(spec)(pts)
    a2 = 2 * spec.diffusion(pts)
    np.testing.assert_allclose(sig @ np.swapaxes(sig, 1, 2), a2, rtol=1e-10, atol=1e-12)


def test_asymmetric_diffusion_rejected():
    spec = OperatorSpec.build(2, a=[["1", "0.3"], ["0", "1"]])
    with pytest.raises(CoefficientError):
        DispersionField(spec)(np.zeros((1, 2)))
    assert not validate_assumptions(spec, 1.0, 8).passed["symmetry"]


@pytest.mark.parametrize("sc", scenario_library(), ids=lambda s: s.name)
def test_every_scenario_validates(sc):
    assert sc.validate().ok


def test_library_contents():
    names = {s.name for s in scenario_library()}
    assert {"laplace-1d", "laplace-2d", "laplace-3d", "hardy-3d", "sinsin-2d", "expdecay",
            "ou-drift"} <= names
    assert any(s.bumps for s in scenario_library() if s.name.startswith("bump"))


def test_laplace_2d_lookup():
    s = get_scenario("laplace-2d")
    pts = np.array([[0.3, 0.7], [5.0, -2.0]])
    np.testing.assert_array_equal(s.spec.diffusion(pts), np.broadcast_to(np.eye(2), (2, 2, 2)))
    assert not s.spec.drift(pts).any() and not s.spec.potential(pts).any()
    assert s.ref("lambda_star") == 0.0
    assert s.ref("classification") == "critical"


def test_hardy_lookup():
    s = get_scenario("hardy-3d")
    x = np.array([[2.0, 0.0, 0.0]])
    assert s.spec.potential(x)[0] == pytest.approx(1 / 16)
    assert s.ref("ground_state") == "r^(-0.5)"
    assert s.shape == "annulus"
    assert s.resolved_inner_radius() == pytest.approx(0.05 * s.radius)


def test_reference_only_when_known():
    s3 = get_scenario("laplace-3d")
    assert s3.ref("ground_state") is None
    assert all(r.provenance in ("literature", "derived", "trivial")
               for s in scenario_library() for r in s.reference.values())


def test_unknown_scenario():
    with pytest.raises(ScenarioNotFound) as exc:
        get_scenario("unknown")
    assert "laplace-2d" in str(exc.value)


# fields ------------------------------------------------------------------

def test_ball_cell_fraction_volume():
    h = 0.1
    ax = np.arange(-1.5, 1.5 + h / 2, h)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    vals = BallIndicator((0.0, 0.0), 1.0).grid_values(pts, (h, h))
    assert vals.sum() * h * h == pytest.approx(np.pi, rel=2e-3)
    assert set(np.unique(cell_fraction(pts, (h, h), (0.0, 0.0), 1.0))) <= set(np.unique(vals))


def test_combination_algebra():
    f = 2.0 * BallIndicator((0.0,), 1.0) + as_field("x1", 1)
    assert isinstance(f, Combination)
    np.testing.assert_allclose(f.evaluate([[0.5], [2.0]]), [2.5, 2.0])
    assert as_field(3.0, 2).constant_value == 3.0
    assert (2.0 * as_field(1.5, 1) - 1.0).constant_value == 2.0


def test_bump_and_plateau_shapes():
    b = bump([0.0, 0.0], 1.0, 2.0)
    assert b.evaluate([[0.0, 0.0]])[0] == pytest.approx(2.0)
    assert b.evaluate([[1.0, 0.0], [3.0, 0.0]]).tolist() == [0.0, 0.0]
    p = plateau([0.0], 1.0, 0.5)
    np.testing.assert_allclose(p.evaluate([[0.0], [1.0], [1.25], [1.5], [2.0]]),
                               [1.0, 1.0, 0.5, 0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 2.0))
def test_bump_nonnegative_and_compact(x, y, rad):
    b = bump([0.5, -0.5], rad, 1.0)
    v = b.evaluate([[x, y]])[0]
    assert v >= 0
    if np.hypot(x - 0.5, y + 0.5) > rad:
        assert v == 0


def test_exprfield_parse_roundtrip():
    f = ExprField.parse("exp(-r^2)", 2)
    assert "exp" in f.describe()
