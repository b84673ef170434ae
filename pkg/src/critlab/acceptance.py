"""Acceptance battery: closed-form and property checks across all modules.

Each ``criterion_k`` returns a :class:`CriterionResult`; :func:`run_suite`
runs a selection and prints one pass/fail line per criterion.
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import criticality as crit
from . import decay, landis, montecarlo as mc
from .discretize import build_discrete_operator
from .eigen import DomainPolicy, principal_eigenpair
from .fields import BallIndicator, Combination, bump
from .grid import make_grid
from .operators import OperatorSpec
from .scenarios import get_scenario, scenario_library

__all__ = ["CriterionResult", "CRITERIA", "run_suite"] + [f"criterion_{k}" for k in range(1, 11)]


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    elapsed: float = 0.0
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} ({self.title}, {self.elapsed:.1f} s): {self.detail}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.elapsed = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# ----------------------------------------------------------------- criteria


@_timed
def criterion_1(quick: bool = False) -> CriterionResult:
    """1D Dirichlet eigenvalue on (-1, 1): accuracy at h = 1/128 and second order."""
    t0 = time.perf_counter()
    exact = -(math.pi / 2) ** 2
    spec = OperatorSpec.build(1)
    hs = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
    lams = [principal_eigenpair(build_discrete_operator(spec, make_grid(1, "interval", h, 1.0))).lam
            for h in hs]
    el = time.perf_counter() - t0
    errs = [abs(v - exact) for v in lams]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    rel = errs[-1] / abs(exact)
    ok = rel < 0.01 and all(1.7 <= p <= 2.3 for p in orders) and el < 5.0
    return CriterionResult(1, "Dirichlet eigenvalue", ok,
                           f"lambda={lams[-1]:.6f} rel.err={rel:.2e} orders="
                           + ",".join(f"{p:.3f}" for p in orders) + f" runtime={el:.2f}s",
                           data={"lambdas": lams, "orders": orders, "runtime": el})


@_timed
def criterion_2(quick: bool = False) -> CriterionResult:
    """laplace-2d eigen-curve: nondecreasing, bracket contains 0, width < 5e-2."""
    t0 = time.perf_counter()
    sc = get_scenario("laplace-2d")
    radii = (4.0, 8.0, 16.0) if quick else (4.0, 8.0, 16.0, 32.0)
    curve = crit.SolverConfig(radii, DomainPolicy("ball", 0.5)).curve(sc.spec)
    el = time.perf_counter() - t0
    v = curve.values
    mono = bool(np.all(np.diff(v) >= -10 * curve.tol))
    lo, hi = curve.bracket
    ok = mono and lo <= 0 <= hi and curve.bracket_width < 5e-2 and el < 60
    return CriterionResult(2, "lambda* monotone limit", ok,
                           f"lambda_R={np.array2string(v, precision=5)} bracket=[{lo:.5f}, {hi:.5f}]"
                           f" width={curve.bracket_width:.4f} runtime={el:.1f}s",
                           data=curve.to_dict())


@_timed
def criterion_3(quick: bool = False) -> CriterionResult:
    """Criticality dichotomy: strict right monotonicity in d=2, not in d=3."""
    s2, s3 = get_scenario("laplace-2d"), get_scenario("laplace-3d")
    solver2 = crit.SolverConfig((4.0, 8.0, 16.0, 32.0), DomainPolicy("ball", 0.5))
    rep2 = crit.right_monotonicity_test(s2.spec, s2.bumps["unit"], [1.0, 2.0, 4.0], solver2,
                                        both_sided=False)
    solver3 = crit.SolverConfig((2.0, 4.0, 8.0), DomainPolicy("ball", 0.5))
    rep3 = crit.right_monotonicity_test(s3.spec, s3.bumps["unit"], [0.025, 0.05, 0.1], solver3,
                                        both_sided=False)
    lo, hi = rep3.base_bracket
    thr = crit.coupling_threshold(s3.spec, s3.bumps["unit"], solver3)
    ok = (rep2.right_classification == "strictly-right-monotone"
          and rep3.right_classification == "not-strictly-right-monotone"
          and lo <= 0 <= hi and thr["threshold"] > 0)
    return CriterionResult(3, "criticality dichotomy", ok,
                           f"d=2 {rep2.right_classification}; d=3 {rep3.right_classification}, "
                           f"bracket=[{lo:.4f}, {hi:.4f}], coupling threshold={thr['threshold']:.4f}"
                           f" (R={thr['radius']:g})",
                           data={"d2": rep2.to_dict(), "d3": rep3.to_dict(), "threshold": thr})


def hardy_residuals(hs=(0.1, 0.05, 0.025), inner: float = 1.0, outer: float = 2.0):
    """Max residual of the discrete Hardy operator on ``|x|^(-1/2)`` at the coarsest nodes."""
    spec = get_scenario("hardy-3d").spec
    unit = min(hs)
    coarse = make_grid(3, "annulus", hs[0], outer, inner)
    keep = {tuple(p) for p in coarse.lattice * int(round(hs[0] / unit))}
    out = []
    for h in hs:
        g = make_grid(3, "annulus", h, outer, inner)
        prob = build_discrete_operator(spec, g)
        res = prob.apply_function(lambda p: np.linalg.norm(p, axis=1) ** -0.5)
        lat = g.lattice * int(round(h / unit))
        mask = np.fromiter((tuple(p) in keep for p in lat), bool, len(lat))
        out.append(float(np.abs(res[mask]).max()))
    return out


@_timed
def criterion_4(quick: bool = False) -> CriterionResult:
    """Hardy ground state: residual order and recurrence of the twisted process."""
    res = hardy_residuals((0.2, 0.1, 0.05) if quick else (0.1, 0.05, 0.025))
    ratios = [a / b for a, b in zip(res, res[1:])]
    sc = get_scenario("hardy-3d")
    drift = mc.TwistedDrift.from_expressions(sc.twisted_drift, 3)
    T = 1e2 if quick else 1e3
    cfg = mc.SimConfig(dt=2e-3, t_max=T, paths=1000 if quick else 4000, seed=2024)
    tw = mc.twisted_simulate(drift, sc.spec, [1.1, 0.0, 0.0], 1.0, cfg,
                             [T / 1000, T / 100, T / 10, T])
    ok = (all(3.5 <= q <= 4.5 for q in ratios) and tw["verdict"] == "recurrent-consistent"
          and tw["final"] >= 0.9)
    return CriterionResult(4, "Hardy ground state", ok,
                           "residuals=" + ",".join(f"{e:.3e}" for e in res)
                           + " ratios=" + ",".join(f"{q:.3f}" for q in ratios)
                           + f"; twisted P(tau<={T:g})={tw['final']:.4f} {tw['verdict']}",
                           data={"residuals": res, "ratios": ratios, "twist": tw})


@_timed
def criterion_5(quick: bool = False) -> CriterionResult:
    """Feynman-Kac oracle E[exp(-tau)] = exp(-1) in d=1 from distance 1."""
    t0 = time.perf_counter()
    spec = OperatorSpec.build(1, a=1.0, V=-1.0)
    cfg = mc.SimConfig(dt=1e-3, t_max=1e3, paths=10_000 if quick else 100_000, seed=7,
                       weight_floor=1e-20)
    rec = mc.simulate_hitting(spec, [1.5], 0.5, cfg)
    est = mc.fk_estimate(rec)
    el = time.perf_counter() - t0
    exact = math.exp(-1.0)
    z = (est.mean - exact) / est.stderr
    ok = abs(z) <= 3 and est.censored_fraction < 0.05 and el < 120
    return CriterionResult(5, "Feynman-Kac oracle", ok,
                           f"estimate={est.mean:.5f} SE={est.stderr:.5f} z={z:+.2f} "
                           f"censored={est.censored_fraction:.3%} runtime={el:.1f}s",
                           data={**est.to_dict(), "z": z, "runtime": el})


@_timed
def criterion_6(quick: bool = False) -> CriterionResult:
    """Transience signature for 3D Brownian motion from |x0| = 2r."""
    spec = OperatorSpec.build(3)
    R = 20.0
    cfg = mc.SimConfig(dt=1e-2, t_max=2e3, r_max=R, paths=5000 if quick else 20_000, seed=11)
    rep = mc.verify_representation(spec, 1.0, 0.0, 1.0, [[2.0, 0.0, 0.0]], cfg,
                                   return_bound=1.0 / R)
    row = rep["rows"][0]
    lo, hi = row["ratio_ci"]
    ok = 0.45 < lo and hi < 0.55 and rep["verdict"] == "strict deficiency"
    return CriterionResult(6, "transience signature", ok,
                           f"ratio={row['ratio']:.4f} CI=[{lo:.4f}, {hi:.4f}] with censoring "
                           f"[{row['ratio_interval'][0]:.4f}, {row['ratio_interval'][1]:.4f}] "
                           f"{rep['verdict']}", data=rep)


@_timed
def criterion_7(quick: bool = False) -> CriterionResult:
    """Sharpness of the exponential lower bound for u = exp(-|x|)."""
    spec = get_scenario("expdecay").spec
    passes, details = [], []
    hw = 30.0 if quick else 48.0
    for e in (0.3, 0.1, 0.03):
        cert = decay.verify_lyapunov(spec, decay.make_certificate(0, 1, 0, 1, 1, e), 1.0, 80.0)
        if cert.status != "verified" or cert.r0 > hw - 2:
            passes.append(False)
            details.append(f"eps'={e}: certificate {cert.status}")
            continue
        chk = decay.lower_bound_check("exp(-r)", cert, cert.r0, half_width=hw, h=1.0, d=3)
        passes.append(chk.passed)
        details.append(f"eps'={e}: r0={cert.r0:.2f} {chk.status} ({chk.checked} nodes)")
    fake = decay.make_certificate(0, 1, 0, 1, 1, 0.1).with_K(0.9)
    fake = decay.verify_lyapunov(spec, fake, 1.0, 80.0)
    ok = all(passes) and fake.status == "failed"
    details.append(f"K=0.9: {fake.status} (worst margin {fake.worst_margin:.3f})")
    return CriterionResult(7, "decay certificate sharpness", ok, "; ".join(details))


def root_sweep(pairs=((0.0, 1.0), (1.0, 2.0), (3.0, 0.5), (2.0, 0.0)), n: int = 50):
    """Largest ``max|root| - kappa1`` over an n-by-n grid of ``|b01| <= M``, ``|k| <= gamma``."""
    worst = -math.inf
    for M, gamma in pairs:
        k1 = decay.kappa1(M, 1.0, gamma)
        for b in np.linspace(-M, M, n):
            for k in np.linspace(-gamma, gamma, n):
                worst = max(worst, max(abs(r) for r in landis.characteristic_roots(b, k)) - k1)
    return worst


@_timed
def criterion_8(quick: bool = False) -> CriterionResult:
    """Landis decision on the Gaussian fixture and exact ODE roots."""
    gauss = landis.radon_profile("exp(-r^2)", 2, 0, (0.0, 4.0), half_width=6.0, h=0.1)
    ode_g = landis.ode_residual_and_roots(gauss, 0.0, 1.0, M=0.0, gamma=1.0)
    dec = landis.landis_decide(2.0, 0.0, 1.0, ode_g)
    s = np.linspace(0.0, 5.0, 101)
    ode_e = landis.ode_residual_and_roots(landis.RadonProfile.from_samples(s, np.exp(-s)), 3.0, 2.0)
    worst = root_sweep()
    ok = (dec["verdict"] == "u≡0 implied" and ode_e.residual < 1e-8
          and ode_e.roots == (-1.0, -2.0) and worst <= 1e-12)
    return CriterionResult(8, "Landis decision", ok,
                           f"gaussian: {dec['verdict']}; exp(-s): residual={ode_e.residual:.2e} "
                           f"roots={ode_e.roots}; sweep max(|root|-kappa1)={worst:.3e}")


@_timed
def criterion_9(quick: bool = False) -> CriterionResult:
    """Khasminskii quadrature against the analytic value c at the ball centre."""
    levels = [0.2, 0.1] if quick else [0.2, 0.1, 0.05]
    ball = BallIndicator((0.0, 0.0, 0.0), 1.0)
    out = {}
    for c in (0.95, 1.0, 1.05):
        out[c] = decay.khasminskii_check(Combination(((c, ball),)), 3, levels=levels)
    rel = abs(out[1.0]["sup"] - 1.0)
    ok = (rel < 0.05 and out[0.95]["verdict"] == "pass" and out[1.05]["verdict"] == "fail"
          and out[1.0]["refinement_change"] < 0.05)
    return CriterionResult(9, "Khasminskii oracle", ok,
                           f"sup(c=1)={out[1.0]['sup']:.5f} rel.err={rel:.2e}; c=0.95 "
                           f"{out[0.95]['verdict']}, c=1.05 {out[1.05]['verdict']}; "
                           f"refinement change {out[1.0]['refinement_change']:.2e}")


# ---------------------------------------------------------- invariant suites


def _small_policy(sc) -> tuple:
    R = sc.radius if sc.d == 1 else min(sc.radius, 4.0)
    h = sc.h if sc.d == 1 else (0.5 if sc.d == 3 else 0.25)
    inner = sc.inner_radius if sc.inner_radius is not None else sc.resolved_inner_radius(R)
    if sc.shape == "annulus" and inner >= R - 3 * h:
        R = inner + 1.0 + 4 * h
    return R, DomainPolicy(sc.shape, h, inner if sc.shape == "annulus" else 0.0)


def _probe_bump(sc, R, policy):
    """A nonnegative bump inside the working domain."""
    d = sc.d
    if sc.shape == "annulus":
        mid = 0.5 * (policy.inner_radius + R)
        width = 0.25 * (R - policy.inner_radius)
        return bump([mid] + [0.0] * (d - 1), width, 1.0)
    return bump([0.0] * d, min(1.0, R / 4), 1.0)


def invariant_checks(sc, seed: int = 0) -> dict:
    """Violations of the structural invariants for one scenario (0 means pass)."""
    R, policy = _small_policy(sc)
    grid = policy.grid(sc.d, R)
    prob = build_discrete_operator(sc.spec, grid)
    base = principal_eigenpair(prob)
    viol = {}
    # shift covariance of the principal eigenvalue
    bad = 0
    for c in (-1.5, 0.75, 2.0):
        lam_c = principal_eigenpair(prob.shifted(c)).lam
        if abs(lam_c - base.lam - c) > 1e-8 * max(1.0, abs(base.lam)):
            bad += 1
    viol["shift_covariance"] = bad
    # Perron positivity and residual
    viol["perron_positivity"] = int(np.count_nonzero(base.psi <= 0)) + int(base.residual > 1e-6)
    # pathwise potential monotonicity on shared noise
    W = _probe_bump(sc, R, policy)
    r = (policy.inner_radius + 0.25) if sc.shape == "annulus" else 0.5
    r = max(r, 0.25)
    x0 = [r + 1.0] + [0.0] * (sc.d - 1)
    cfg = mc.SimConfig(dt=1e-2, t_max=5.0, r_max=R, paths=256, seed=seed)
    rec1 = mc.simulate_hitting(sc.spec, x0, r, cfg)
    rec2 = mc.simulate_hitting(sc.spec.add_potential(W, 0.5), x0, r, cfg)
    same = np.array_equal(rec1.cause, rec2.cause) and np.array_equal(rec1.tau, rec2.tau)
    w1 = mc.fk_estimate(rec1).values
    w2 = mc.fk_estimate(rec2).values
    viol["pathwise_monotonicity"] = (0 if same else 1) + int(np.count_nonzero(w2 < w1))
    # calibrate_delta idempotence
    r_half = 0.5 * (policy.inner_radius + R) if sc.shape == "annulus" else R / 2
    solver = crit.SolverConfig((r_half, R), policy, tol=1e-11)
    if sc.shape == "annulus":
        centre = [0.5 * (policy.inner_radius + R)] + [0.0] * (sc.d - 1)
        rad = 0.25 * (R - policy.inner_radius)
    else:
        centre, rad = [0.0] * sc.d, min(1.0, R / 4)
    ball = BallIndicator(tuple(centre), rad)
    lam0 = solver.lam(sc.spec)
    target = lam0 + 0.25
    first = crit.calibrate_delta(sc.spec, ball, target, solver)
    again = crit.calibrate_delta(sc.spec.add_potential(ball, first.value), ball, target, solver)
    viol["calibrate_delta_idempotence"] = int(abs(again.value) > 1e-9 * max(1.0, first.value))
    viol["manifest_replay"] = manifest_replay_violations(sc, seed)
    return viol


def manifest_replay_violations(sc, seed: int = 0) -> int:
    """Run a small Monte Carlo command, replay it from its manifest, count differing files."""
    from .cli import execute
    from .config import Config
    from .reporting import RunManifest

    r = 0.5 if sc.shape != "annulus" else 0.5 + (sc.inner_radius or 0.0)
    x0 = ",".join(["%r" % (r + 1.0)] + ["0"] * (sc.d - 1))
    text = (f"[scenario]\npreset = {sc.name}\n[run]\nseed = {seed + 17}\n"
            f"[mc]\nr = {r}\nx0 = {x0}\ndt = 0.02\nt_max = 4\nr_max = 6\npaths = 64\n"
            f"psi = 1\ncensor_cap = 1.0\n")
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a", Path(tmp) / "b"
        execute("mc-verify", Config(text, "inline.cfg"), a)
        data = RunManifest.load(a / "manifest.json")
        execute(data["command"], Config(data["config_text"], data["config_path"],
                                        data["overrides"]), b)
        bad = 0
        for f in sorted(p.name for p in a.iterdir() if p.suffix in (".csv", ".json")
                        and p.name != "manifest.json"):
            if (a / f).read_bytes() != (b / f).read_bytes():
                bad += 1
        return bad


@_timed
def criterion_10(quick: bool = False) -> CriterionResult:
    """Structural invariants over the full scenario library."""
    per, total = {}, 0
    for sc in scenario_library():
        v = invariant_checks(sc)
        per[sc.name] = v
        total += sum(v.values())
    worst = [f"{n}:{k}={c}" for n, v in per.items() for k, c in v.items() if c]
    return CriterionResult(10, "invariant suites", total == 0,
                           f"{len(per)} scenarios, {total} violations"
                           + (" (" + ", ".join(worst) + ")" if worst else ""), data=per)


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 11)}


def run_suite(which="all", quick: bool = False, out_dir=None, echo=print) -> list:
    """Run the selected criteria (``"all"`` or e.g. ``"1,5,9"``); print one line each."""
    if isinstance(which, str):
        keys = list(CRITERIA) if which == "all" else [int(k) for k in which.split(",") if k]
    else:
        keys = list(which)
    results = []
    for k in keys:
        try:
            res = CRITERIA[k](quick=quick)
        except Exception as exc:  # a crash is reported as a failed criterion
            res = CriterionResult(k, CRITERIA[k].__doc__.splitlines()[0], False,
                                  f"error: {type(exc).__name__}: {exc}")
        results.append(res)
        if echo:
            echo(res.line())
    if echo:
        echo(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    if out_dir is not None:
        from .reporting import write_json

        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(Path(out_dir) / "suite.json",
                   [{"criterion": r.number, "title": r.title, "passed": r.passed,
                     "detail": r.detail, "elapsed_s": round(r.elapsed, 3)} for r in results])
    return results
