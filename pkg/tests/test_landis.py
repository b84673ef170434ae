import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from critlab import landis as L
from critlab.acceptance import root_sweep


@pytest.fixture(scope="module")
def gauss():
    return L.radon_profile("exp(-r^2)", 2, 0, (-4.0, 4.0), half_width=6.0, h=0.1)


def test_gaussian_profile(gauss):
    assert gauss.w == pytest.approx(math.sqrt(math.pi) * np.exp(-gauss.s**2), abs=1e-10)
    assert np.all(np.abs(gauss.w) <= gauss.slice_bound + 1e-15)
    assert gauss.tail.max() < 0.05


def test_odd_profile_vanishes():
    prof = L.radon_profile("x2*exp(-r^2)", 2, 0, half_width=6.0, h=0.1)
    assert np.abs(prof.w).max() < 1e-15


def test_zero_profile():
    prof = L.radon_profile("0", 3, 1, half_width=2.0, h=0.25)
    assert not prof.w.any()
    ode = L.ode_residual_and_roots(prof, 0.0, 1.0)
    assert ode.exact_zero and ode.residual is None


def test_profile_linearity():
    u, v = "exp(-r^2)", "x1*exp(-2*r^2)"
    pu = L.radon_profile(u, 2, 0, half_width=5.0, h=0.1)
    pv = L.radon_profile(v, 2, 0, half_width=5.0, h=0.1)
    puv = L.radon_profile(f"{u} + {v}", 2, 0, half_width=5.0, h=0.1)
    assert puv.w == pytest.approx(pu.w + pv.w, abs=1e-12)


def test_profile_errors():
    with pytest.raises(L.ProfileError, match="decay"):
        L.radon_profile("exp(-r)", 2, half_width=3.0)
    with pytest.raises(ValueError, match="axis"):
        L.radon_profile("exp(-r^2)", 2, axis=2)


def test_exponential_profile_roots():
    s = np.linspace(0.0, 5.0, 101)
    ode = L.ode_residual_and_roots(L.RadonProfile.from_samples(s, np.exp(-s)), 3.0, 2.0)
    assert ode.roots == (-1.0, -2.0)
    assert ode.residual < 1e-8
    assert ode.kappa_obs == pytest.approx(1.0, rel=1e-10)


def test_imaginary_pair():
    r1, r2 = L.characteristic_roots(0.0, 2.25)
    assert r1 == pytest.approx(1.5j) and r2 == pytest.approx(-1.5j)
    s = np.linspace(0.0, 5.0, 41)
    ode = L.ode_residual_and_roots(L.RadonProfile.from_samples(s, np.cos(1.5 * s)), 0.0, 2.25)
    assert ode.root_moduli == pytest.approx((1.5, 1.5))
    assert ode.residual < 1e-4


def test_gaussian_not_an_ode_solution(gauss):
    ode = L.ode_residual_and_roots(gauss, 0.0, -1.0)
    assert ode.residual > 1.0


def test_short_ladder_rejected():
    prof = L.RadonProfile.from_samples([0.0, 1.0, 2.0, 3.0], [1.0, 0.5, 0.25, 0.125])
    with pytest.raises(L.ProfileError, match="five"):
        L.ode_residual_and_roots(prof, 0.0, 1.0)


@given(b=st.floats(-50, 50), k=st.floats(-50, 50))
def test_root_identity(b, k):
    r1, r2 = L.characteristic_roots(b, k)
    scale = max(1.0, abs(b), abs(k))
    assert abs((r1 + r2) + b) <= 1e-12 * scale
    assert abs(r1 * r2 - k) <= 1e-12 * scale
    for r in (r1, r2):
        assert abs(r * r + b * r + k) <= 1e-12 * scale * max(1.0, abs(r)) ** 2 * 4


def test_root_moduli_bounded_by_kappa1():
    assert root_sweep() <= 1e-12


@given(M=st.floats(0, 10), gamma=st.floats(0, 10), tb=st.floats(-1, 1), tk=st.floats(-1, 1))
def test_root_bound_random(M, gamma, tb, tk):
    b, k = tb * M, tk * gamma
    k1 = M / 2 + math.sqrt(M * M / 4 + gamma)
    assert max(abs(r) for r in L.characteristic_roots(b, k)) <= k1 * (1 + 1e-12) + 1e-300


def test_decide_examples(gauss):
    ode = L.ode_residual_and_roots(gauss, 0.0, 1.0, M=0.0, gamma=1.0)
    assert ode.roots == (1j, -1j)
    assert L.landis_decide(2.0, 0.0, 1.0, ode)["verdict"] == "u≡0 implied"
    out = L.landis_decide(0.5, 0.0, 1.0)
    assert out["verdict"] == "inconclusive" and out["reasons"]
    # the margin is necessary: a rate equal to kappa1 proves nothing
    assert L.landis_decide(1.0, 0.0, 1.0)["verdict"] == "inconclusive"


def test_decide_root_outside():
    s = np.linspace(0.0, 5.0, 51)
    ode = L.ode_residual_and_roots(L.RadonProfile.from_samples(s, np.exp(-3 * s)), 4.0, 3.0,
                                   M=1.0, gamma=1.0)
    out = L.landis_decide(5.0, 1.0, 1.0, ode)
    assert out["verdict"] == "inconclusive"


def test_decide_eigenvalue_bracket():
    assert L.landis_decide(3.0, 0.0, 1.0, lam_bracket=(-0.1, -0.01))["verdict"] == "u≡0 implied"
    assert L.landis_decide(3.0, 0.0, 1.0, lam_bracket=(-0.1, 0.01))["verdict"] == "inconclusive"


@given(a=st.floats(0, 10), b=st.floats(0, 10), M=st.floats(0, 3), g=st.floats(0, 3))
def test_decide_monotone(a, b, M, g):
    lo, hi = min(a, b), max(a, b)
    if L.landis_decide(lo, M, g)["verdict"] == "u≡0 implied":
        assert L.landis_decide(hi, M, g)["verdict"] == "u≡0 implied"


def test_poincare_constant():
    rep = L.reverse_poincare_check("1", 2, 1.0, 0.01, h=0.05)
    assert rep["verdict"] == "pass"
    assert all(row["ratio"] == 0 for row in rep["rows"])


def test_poincare_exponential():
    rep = L.reverse_poincare_check("exp(-x1)", 2, 1.0, 1.01, h=0.05)
    assert rep["verdict"] == "pass"
    assert all(row["ratio"] == pytest.approx(1.0, abs=2e-3) for row in rep["rows"])
    assert rep["kappa"] == pytest.approx(math.sqrt(2 * 1.01) + 1)
    assert rep["envelope_holds"]
    assert L.reverse_poincare_check("exp(-x1)", 2, 1.0, 0.9, h=0.05)["verdict"] == "fail"


def _ball_average_ratio(c1, r):
    def chord(t):
        return 2 * math.sqrt(max(r * r - t * t, 0.0))
    num = quad(lambda t: chord(t) * math.cos(c1 + t) ** 2, -r, r, limit=400)[0]
    den = quad(lambda t: chord(t) * math.sin(c1 + t) ** 2, -r, r, limit=400)[0]
    return num / den


def test_poincare_sine_against_ball_averages():
    centers = [[50.0, 0.0], [63.0, 0.0], [81.0, 0.0]]
    rep = L.reverse_poincare_check("sin(x1)", 2, 10.0, 1.2, centers=centers, h=0.1)
    for row in rep["rows"]:
        assert row["ratio"] == pytest.approx(_ball_average_ratio(row["center"][0], 10.0),
                                             rel=1.5e-2)
        assert row["ratio"] == pytest.approx(1.0, abs=0.05)
    assert rep["verdict"] == "pass"


def test_poincare_errors():
    with pytest.raises(ValueError, match="2h"):
        L.reverse_poincare_check("1", 2, 0.05, 1.0, h=0.05)
    rep = L.reverse_poincare_check("0", 2, 1.0, 1.0, h=0.1)
    assert rep["verdict"].startswith("unique continuation")


def test_ode_coefficients_rotation():
    b01, k = L.ode_coefficients([3.0, 4.0], 2.0, [0.0, 2.0])
    assert (b01, k) == (4.0, 2.0)
    with pytest.raises(ValueError):
        L.ode_coefficients([1.0, 0.0], 1.0, [0.0, 0.0])


def test_profile_csv(gauss):
    text = gauss.to_csv(0.0, 1.0)
    lines = text.splitlines()
    assert lines[0] == "s,w,w_prime,w_second,residual"
    assert len(lines) == len(gauss.s) - 6 + 1
    assert math.isfinite(float(lines[1].split(",")[-1]))
