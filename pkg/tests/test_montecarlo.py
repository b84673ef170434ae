import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critlab import backend
from critlab import montecarlo as mc
from critlab.eigen import principal_eigenpair
from critlab.discretize import build_discrete_operator
from critlab.grid import make_grid
from critlab.operators import OperatorSpec

BM1 = OperatorSpec.build(1)
BM2 = OperatorSpec.build(2)
BM3 = OperatorSpec.build(3)
KILLED = OperatorSpec.build(1, V=-1.0)


def test_simconfig_validation():
    with pytest.raises(ValueError):
        mc.SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        mc.SimConfig(paths=0)
    with pytest.raises(ValueError):
        mc.SimConfig(t_max=-1.0)
    assert mc.SimConfig(dt=0.1, t_max=1.0).n_steps == 10


def test_weight_floor_requires_nonpositive_potential():
    cfg = mc.SimConfig(dt=1e-2, t_max=1.0, paths=4, weight_floor=1e-12)
    with pytest.raises(ValueError):
        mc.simulate_hitting(OperatorSpec.build(1, V="exp(-r)"), [2.0], 1.0, cfg)


def test_feynman_kac_oracle_one_dimension():
    cfg = mc.SimConfig(dt=1e-3, t_max=200.0, paths=20_000, seed=5, weight_floor=1e-20)
    est = mc.fk_estimate(mc.simulate_hitting(KILLED, [1.5], 0.5, cfg))
    assert abs(est.mean - math.exp(-1.0)) <= 3 * est.stderr
    assert est.censored_fraction < 0.05
    lo, hi = est.ci()
    assert lo < est.mean < hi


def test_three_dimensional_hitting_probability():
    R = 20.0
    cfg = mc.SimConfig(dt=1e-2, t_max=2000.0, r_max=R, paths=4000, seed=9)
    rec = mc.simulate_hitting(BM3, [2.0, 0.0, 0.0], 1.0, cfg)
    est = mc.fk_estimate(rec)
    killed_law = (1 / 2 - 1 / R) / (1 - 1 / R)
    assert abs(est.mean - killed_law) <= 3 * est.stderr
    # whole-space law 1/2 within 3 SE plus the kill-sphere return bound
    assert abs(est.mean - 0.5) <= 3 * est.stderr + rec.fraction(mc.CENS_R) * (1 / R)


def test_start_inside_ball_hits_immediately():
    rec = mc.simulate_hitting(BM2, [0.2, 0.1], 1.0, mc.SimConfig(paths=50))
    assert np.all(rec.hit) and np.all(rec.tau == 0.0)


def test_records_csv_and_counts():
    rec = mc.simulate_hitting(BM1, [2.0], 1.0, mc.SimConfig(dt=0.01, t_max=1.0, paths=20))
    assert sum(rec.counts().values()) == 20
    text = rec.to_csv(limit=3)
    assert text.splitlines()[0] == "path,cause,tau,int_V,x1" and len(text.splitlines()) == 4


@pytest.mark.parametrize("name", backend.available())
def test_deterministic_across_workers(name):
    spec = OperatorSpec.build(2, b=["-x1", "0.3"], V="-0.1*exp(-r^2)")
    base = mc.SimConfig(dt=1e-2, t_max=5.0, r_max=6.0, paths=700, seed=21, chunk=128,
                        backend=name)
    a = mc.simulate_hitting(spec, [2.0, 0.0], 0.5, base)
    from dataclasses import replace

    b = mc.simulate_hitting(spec, [2.0, 0.0], 0.5, replace(base, workers=4))
    for f in ("cause", "tau", "int_v", "hit_point"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert mc.fk_estimate(a).mean == mc.fk_estimate(b).mean


@pytest.mark.skipif("compiled" not in backend.available(), reason="extension not built")
def test_backends_agree():
    spec = OperatorSpec.build(3, V="0.25/r^2")
    drift = mc.TwistedDrift.from_expressions(("-x1/r^2", "-x2/r^2", "-x3/r^2"), 3)
    cfg = mc.SimConfig(dt=1e-2, t_max=10.0, paths=300, seed=4)
    from dataclasses import replace

    a = mc.simulate_hitting(spec, [1.1, 0, 0], 1.0, replace(cfg, backend="python"), twisted=drift)
    b = mc.simulate_hitting(spec, [1.1, 0, 0], 1.0, replace(cfg, backend="compiled"),
                            twisted=drift)
    assert np.array_equal(a.cause, b.cause)
    np.testing.assert_allclose(a.tau, b.tau, rtol=0, atol=1e-12)
    np.testing.assert_allclose(a.int_v, b.int_v, rtol=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.1, 3.0))
def test_pathwise_potential_monotonicity(seed, height):
    cfg = mc.SimConfig(dt=2e-2, t_max=5.0, r_max=5.0, paths=64, seed=seed)
    W = f"{height!r}*exp(-(x1 - 1.5)^2 - x2^2)"
    rec1 = mc.simulate_hitting(BM2, [2.0, 0.0], 0.5, cfg)
    rec2 = mc.simulate_hitting(BM2.add_potential(W), [2.0, 0.0], 0.5, cfg)
    assert np.array_equal(rec1.cause, rec2.cause)
    assert np.all(mc.fk_estimate(rec2).values >= mc.fk_estimate(rec1).values)


def test_censoring_accounting():
    cfg = mc.SimConfig(dt=1e-2, t_max=20.0, r_max=8.0, paths=2000, seed=3)
    rec = mc.simulate_hitting(BM3, [2.0, 0.0, 0.0], 1.0, cfg)
    est = mc.fk_estimate(rec)
    raw = rec.hit.mean()
    assert est.mean + est.censored_fraction >= raw - 1e-15
    assert 0 <= est.censored_fraction <= 1 and est.stderr >= 0


def test_dt_refinement_trend():
    errs = []
    for dt in (4e-2, 2e-2, 1e-2, 5e-3):
        cfg = mc.SimConfig(dt=dt, t_max=100.0, paths=20_000, seed=17, bridge=False,
                           weight_floor=1e-20)
        errs.append(abs(mc.fk_estimate(mc.simulate_hitting(KILLED, [1.5], 0.5, cfg)).mean
                        - math.exp(-1.0)))
    assert all(b <= a for a, b in zip(errs, errs[1:])), errs


# representation ---------------------------------------------------------

def test_recurrent_plane_consistent_with_ground_state():
    cfg = mc.SimConfig(dt=2e-2, t_max=2000.0, paths=2000, seed=1)
    rep = mc.verify_representation(BM2, 1.0, 0.0, 1.0, [[1.2, 0.0]], cfg)
    assert rep["verdict"] == "consistent with ground state"
    lo, hi = rep["rows"][0]["ratio_interval"]
    assert lo <= 1 <= hi


def test_transient_space_strict_deficiency():
    cfg = mc.SimConfig(dt=1e-2, t_max=2000.0, r_max=20.0, paths=4000, seed=11)
    rep = mc.verify_representation(BM3, 1.0, 0.0, 1.0, [[2.0, 0.0, 0.0]], cfg, return_bound=0.05)
    assert rep["verdict"] == "strict deficiency"
    assert 0.45 < rep["rows"][0]["ratio"] < 0.55


def test_start_on_sphere_ratio_one():
    rep = mc.verify_representation(BM3, 1.0, 0.0, 1.0, [[1.0, 0.0, 0.0]], mc.SimConfig(paths=10))
    assert rep["rows"][0]["ratio"] == 1.0


def test_excess_censoring_is_inconclusive():
    cfg = mc.SimConfig(dt=1e-2, t_max=2.0, paths=500, seed=2)
    rep = mc.verify_representation(BM2, 1.0, 0.0, 1.0, [[3.0, 0.0]], cfg)
    assert rep["verdict"] == "inconclusive"


def test_representation_with_grid_eigenpair():
    grid = make_grid(1, "interval", 0.02, 3.0)
    pair = principal_eigenpair(build_discrete_operator(BM1, grid))
    pair.grid = grid
    # the Dirichlet eigenfunction vanishes on the kill sphere |x| = 3
    cfg = mc.SimConfig(dt=1e-3, t_max=50.0, r_max=3.0, paths=4000, seed=8)
    rep = mc.verify_representation(BM1, pair, pair.lam, 0.5, [[1.5]], cfg, return_bound=0.0)
    assert rep["verdict"] == "consistent with ground state"


# twisted process ----------------------------------------------------------

def test_constant_psi_twist_equals_base_process():
    grid = make_grid(3, "ball", 1.0, 16.0)
    drift = mc.TwistedDrift.from_grid(grid, np.full(grid.n, 3.0))
    cfg = mc.SimConfig(dt=2e-2, t_max=2.0, paths=300, seed=6)
    a = mc.twisted_simulate(drift, BM3, [2.0, 0, 0], 1.0, cfg, [0.5, 2.0])
    b = mc.twisted_simulate(mc.TwistedDrift.trivial(3), BM3, [2.0, 0, 0], 1.0, cfg, [0.5, 2.0])
    assert a["counts"]["left validity box"] == 0
    assert a["curve"] == b["curve"]


def test_three_dimensional_plateau_is_transient():
    cfg = mc.SimConfig(dt=2e-2, t_max=2000.0, r_max=20.0, paths=2000, seed=12)
    rep = mc.twisted_simulate(mc.TwistedDrift.trivial(3), BM3, [2.0, 0, 0], 1.0, cfg,
                              [10.0, 100.0, 1000.0, 2000.0])
    assert rep["verdict"] == "transient-consistent"
    assert abs(rep["final"] - 0.5) < 0.05
    P = [c["P_hat"] for c in rep["curve"]]
    assert P == sorted(P)
    for c in rep["curve"]:
        assert c["wilson_lo"] <= c["P_hat"] <= c["wilson_hi"]


def test_hardy_twisted_drift_from_grid_matches_analytic():
    grid = make_grid(3, "annulus", 0.1, 3.0, 0.5)
    psi = np.linalg.norm(grid.points, axis=1) ** -0.5
    drift = mc.TwistedDrift.from_grid(grid, psi)
    exact = mc.TwistedDrift.from_expressions(("-x1/r^2", "-x2/r^2", "-x3/r^2"), 3)
    pts = np.array([[1.23, 0.4, -0.2], [0.0, 2.01, 0.3], [-1.0, -1.0, 0.55]])
    spec = OperatorSpec.build(3, V="0.25/r^2")
    np.testing.assert_allclose(drift.correction(spec, pts), exact.correction(spec, pts),
                               atol=3e-2)


def test_twisted_validity_box_cap():
    grid = make_grid(2, "ball", 0.25, 2.0)
    drift = mc.TwistedDrift.from_grid(grid, np.ones(grid.n))
    cfg = mc.SimConfig(dt=1e-2, t_max=50.0, paths=200, seed=1)
    with pytest.raises(RuntimeError):
        mc.twisted_simulate(drift, BM2, [1.5, 0.0], 0.25, cfg, [50.0])


def test_from_grid_rejects_nonpositive_psi():
    grid = make_grid(1, "interval", 0.25, 1.0)
    with pytest.raises(ValueError):
        mc.TwistedDrift.from_grid(grid, np.zeros(grid.n))


# necessary condition ----------------------------------------------------

def test_necessary_condition_identical_potentials():
    cfg = mc.SimConfig(dt=1e-2, t_max=50.0, r_max=10.0, paths=1000, seed=3)
    rep = mc.necessary_condition_compare(BM3, BM3, 1.0, [[2.0, 0, 0], [3.0, 0, 0]], cfg)
    assert all(row["ratio"] == 1.0 for row in rep["rows"])


def test_necessary_condition_lower_potential():
    cfg = mc.SimConfig(dt=1e-2, t_max=50.0, r_max=10.0, paths=1000, seed=3)
    rep = mc.necessary_condition_compare(BM3, BM3.with_potential("-exp(-r^2)"), 1.0,
                                         [[2.0, 0, 0]], cfg)
    row = rep["rows"][0]
    assert row["ratio"] <= 1 + 3 * row["ratio_se"]


def test_necessary_condition_far_start_ratio_near_one():
    cfg = mc.SimConfig(dt=2e-2, t_max=200.0, r_max=30.0, paths=2000, seed=4)
    V1 = "0.3*max(0, 1 - ((x1 - 1.5)^2 + x2^2 + x3^2))"
    V2 = "-0.3*max(0, 1 - ((x1 + 1.5)^2 + x2^2 + x3^2))"
    near = mc.necessary_condition_compare(BM3.with_potential(V1), BM3.with_potential(V2), 0.5,
                                          [[2.5, 0, 0]], cfg)
    far = mc.necessary_condition_compare(BM3.with_potential(V1), BM3.with_potential(V2), 0.5,
                                         [[12.0, 0, 0]], cfg)
    assert abs(far["C_r"] - 1) < abs(near["C_r"] - 1)


def test_necessary_condition_requires_same_diffusion():
    with pytest.raises(ValueError):
        mc.necessary_condition_compare(BM2, OperatorSpec.build(2, a=2.0), 1.0, [[2.0, 0]],
                                       mc.SimConfig(paths=10))
