"""Criticality classification, coupling calibrations and Liouville comparisons.

All generalized eigenvalues here are estimated by :func:`eigen_curve` on a
ladder of truncation radii, so every statement carries the resolution of
that ladder; reports record the margins used.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .discretize import build_discrete_operator
from .eigen import DomainPolicy, EigenCurve, eigen_curve, principal_eigenpair
from .fields import Field, as_field
from .grid import Grid
from .operators import OperatorSpec

__all__ = [
    "SolverConfig",
    "MonotonicityReport",
    "right_monotonicity_test",
    "coupling_threshold",
    "CalibrationError",
    "calibrate_delta",
    "calibrate_beta",
    "ComparisonReport",
    "liouville_compare",
    "sign_change_audit",
]


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    radii: tuple = (4.0, 8.0, 16.0, 32.0)
    policy: DomainPolicy = field(default_factory=DomainPolicy)
    tol: float = 1e-10
    max_iter: int = 200

    def curve(self, spec: OperatorSpec, keep_pairs: bool = False) -> EigenCurve:
        return eigen_curve(spec, self.radii, self.policy, tol=self.tol, max_iter=self.max_iter,
                           keep_pairs=keep_pairs)

    def lam(self, spec: OperatorSpec) -> float:
        return self.curve(spec).lam_star

    def grid(self, d: int, R: float | None = None) -> Grid:
        return self.policy.grid(d, self.radii[-1] if R is None else R)

    def describe(self) -> dict:
        return {"radii": list(self.radii), "shape": self.policy.shape,
                "h": self.policy.spacing(self.radii[-1]),
                "inner_radius": self.policy.inner_radius, "tol": self.tol}


def _sup_norm(f: Field, grid: Grid) -> float:
    return float(np.abs(f.grid_values(grid.points, grid.h)).max())


def _support_radius(values, points, threshold=1e-12) -> float:
    mask = np.abs(values) > threshold
    if not mask.any():
        return 0.0
    return float(np.sqrt(np.einsum("ij,ij->i", points[mask], points[mask])).max())


# --------------------------------------------------------------- monotonicity


@dataclass
class MonotonicityReport:
    base_lambda: float
    base_bracket: tuple
    bump: str
    rows: list  # dicts per epsilon
    right_strict: bool
    left_strict: bool | None
    invariant_ok: bool
    solver: dict

    @property
    def classification(self) -> str:
        if not self.right_strict:
            return "not-right-monotone"
        return "strictly-monotone" if self.left_strict else "right-monotone-only"

    @property
    def right_classification(self) -> str:
        return "strictly-right-monotone" if self.right_strict else "not-strictly-right-monotone"

    @property
    def margin(self) -> float:
        return min(r["right_excess"] for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "base_lambda": self.base_lambda,
            "base_bracket": list(self.base_bracket),
            "bump": self.bump,
            "ladder": self.rows,
            "classification": self.classification,
            "right_classification": self.right_classification,
            "right_strict": self.right_strict,
            "left_strict": self.left_strict,
            "invariant_ok": self.invariant_ok,
            "solver": self.solver,
        }


def right_monotonicity_test(spec: OperatorSpec, bump: Field, epsilons: Sequence[float],
                            solver: SolverConfig, both_sided: bool = True) -> MonotonicityReport:
    """Classify strict (right) monotonicity of the generalized eigenvalue at ``V``.

    For every ``eps`` the difference ``lam(V + eps h) - lam(V)`` must beat
    ``max(10 * w, 1e-3 * eps * sup h)``, where ``w`` is the bracket width of
    the perturbed curve.  The left side is tested the same way with
    ``V - eps h``.
    """
    bump = as_field(bump, spec.d)
    g_small = solver.grid(spec.d, solver.radii[0])
    sup_h = _sup_norm(bump, g_small)
    if sup_h <= 0:
        raise ValueError("bump must be nonzero on the grid")
    g_big = solver.grid(spec.d)
    hv = bump.grid_values(g_big.points, g_big.h)
    if hv.min() < -1e-14:
        raise ValueError("bump must be nonnegative")
    supp = _support_radius(hv, g_big.points)
    bp = g_small.boundary_points
    # on an annulus only the outer sphere counts; the hole edge may carry the bump
    bp = bp[np.linalg.norm(bp, axis=1) > 0.5 * (g_small.inner_radius + g_small.radius)]
    outer = np.abs(bump.evaluate(bp)).max() if len(bp) else 0
    if supp >= solver.radii[0] or outer > 0:
        raise ValueError(
            f"bump support (radius {supp:.3g}) must lie inside the smallest domain "
            f"B_{solver.radii[0]:g}"
        )
    base = solver.curve(spec)
    lam0 = base.lam_star
    rows = []
    right, left, inv = True, True, True
    for eps in epsilons:
        eps = float(eps)
        if eps <= 0:
            raise ValueError("epsilons must be positive")
        cp = solver.curve(spec.add_potential(bump, eps))
        margin_floor = 1e-3 * eps * sup_h
        row = {
            "epsilon": eps,
            "lambda_plus": cp.lam_star,
            "bracket_plus": list(cp.bracket),
            "diff_plus": cp.lam_star - lam0,
            "margin_plus": max(10 * cp.bracket_width, margin_floor),
        }
        row["right_excess"] = row["diff_plus"] - row["margin_plus"]
        strict_r = row["right_excess"] > 0
        right &= strict_r
        tol_inv = 10 * solver.tol * max(1.0, abs(lam0))
        inv &= all(p[2] >= b[2] - tol_inv for p, b in zip(cp.rows, base.rows))
        if both_sided:
            cm = solver.curve(spec.add_potential(bump, -eps))
            row.update(
                lambda_minus=cm.lam_star,
                bracket_minus=list(cm.bracket),
                diff_minus=lam0 - cm.lam_star,
                margin_minus=max(10 * cm.bracket_width, margin_floor),
            )
            row["left_excess"] = row["diff_minus"] - row["margin_minus"]
            left &= row["left_excess"] > 0
            inv &= all(m[2] <= b[2] + tol_inv for m, b in zip(cm.rows, base.rows))
        rows.append(row)
    return MonotonicityReport(lam0, base.bracket, bump.describe(), rows, bool(right),
                              bool(left) if both_sided else None, bool(inv), solver.describe())


def coupling_threshold(spec: OperatorSpec, bump: Field, solver: SolverConfig,
                       eps_max: float = 64.0, rtol: float = 1e-3) -> dict:
    """Smallest ``eps`` with a positive Dirichlet eigenvalue for ``V + eps h`` on ``B_Rmax``.

    On a finite ball this overestimates the whole-space coupling threshold;
    the value is reported together with the radius.
    """
    R = solver.radii[-1]
    grid = solver.grid(spec.d, R)
    base = build_discrete_operator(spec, grid)
    hv = as_field(bump, spec.d).grid_values(grid.points, grid.h)

    def lam(eps):
        return principal_eigenpair(base.with_potential_values(base.V + eps * hv),
                                   tol=solver.tol, max_iter=solver.max_iter).lam

    if lam(0.0) > 0:
        return {"threshold": 0.0, "radius": R, "lambda_at_zero": lam(0.0)}
    lo, hi = 0.0, 1.0
    while lam(hi) <= 0:
        lo, hi = hi, 2 * hi
        if hi > eps_max:
            raise CalibrationError(f"no positive eigenvalue for eps up to {eps_max:g}")
    t = brentq(lam, lo, hi, rtol=rtol, xtol=1e-12)
    return {"threshold": float(t), "radius": R}


# ---------------------------------------------------------------- calibration


@dataclass
class CalibrationResult:
    value: float
    lam: float
    target: float
    ladder: list  # (parameter, lambda) evaluations in order

    def to_dict(self) -> dict:
        return {"value": self.value, "lambda": self.lam, "target": self.target,
                "evaluations": [list(p) for p in self.ladder]}


def _root_in_expanding_bracket(fun, lo, hi, cap, tol, what):
    f_lo = fun(lo)
    if f_lo == 0:
        return lo
    f_hi = fun(hi)
    while f_hi < 0:
        if hi >= cap:
            raise CalibrationError(
                f"{what}: no sign change on [{lo:g}, {hi:g}] (map too flat or target too high)"
            )
        lo = hi
        hi = min(2 * hi, cap)
        f_hi = fun(hi)
    if f_hi == 0:
        return hi
    return brentq(fun, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps)


def calibrate_delta(spec: OperatorSpec, ball: Field, target: float, solver: SolverConfig,
                    tol: float = 1e-8, delta_max: float = 1e6) -> CalibrationResult:
    """Find ``delta >= 0`` with ``lam(V + delta 1_B) = target``.

    The map is nondecreasing and convex in ``delta``; the root is bracketed
    by doubling, then refined with Brent's method.
    """
    ball = as_field(ball, spec.d)
    ladder = []

    def lam_of(delta):
        v = solver.lam(spec.add_potential(ball, delta) if delta else spec)
        ladder.append((float(delta), v))
        return v

    lam0 = lam_of(0.0)
    if target < lam0 - tol:
        raise CalibrationError(f"target {target:g} is below lambda*(V) = {lam0:.10g}")
    if abs(target - lam0) <= tol:
        return CalibrationResult(0.0, lam0, target, ladder)
    delta = _root_in_expanding_bracket(lambda t: lam_of(t) - target, 0.0, 1.0, delta_max,
                                       tol * 1e-2, "calibrate_delta")
    lam = lam_of(delta)
    if abs(lam - target) >= tol:
        raise CalibrationError(f"calibration missed target: {lam:.12g} vs {target:.12g}")
    return CalibrationResult(float(delta), lam, target, ladder)


def calibrate_beta(spec1: OperatorSpec, spec2: OperatorSpec, bump1: Field, bump2: Field,
                   beta1: float, solver: SolverConfig, tol: float = 1e-8,
                   beta_max: float = 1e6) -> CalibrationResult:
    """Find ``beta2`` so that ``lam(V2 + beta2 b2)`` matches ``lam(V1 + beta1 b1)``."""
    if beta1 < 0:
        raise ValueError("beta1 must be nonnegative")
    lam1 = solver.lam(spec1.add_potential(bump1, beta1) if beta1 else spec1)
    ladder = []

    def lam_of(beta):
        v = solver.lam(spec2.add_potential(bump2, beta) if beta else spec2)
        ladder.append((float(beta), v))
        return v

    lam20 = lam_of(0.0)
    if beta1 == 0 or abs(lam1 - lam20) <= tol * 1e-2:
        if abs(lam1 - lam20) > tol:
            raise CalibrationError("zero coupling on both sides gives different eigenvalues")
        return CalibrationResult(0.0, lam20, lam1, ladder)
    if lam1 < lam20:
        raise CalibrationError("target eigenvalue lies below lambda*(V2)")
    beta2 = _root_in_expanding_bracket(lambda b: lam_of(b) - lam1, 0.0, max(beta1, 1e-3),
                                       beta_max, tol * 1e-3, "calibrate_beta")
    lam2 = lam_of(beta2)
    if abs(lam2 - lam1) >= tol:
        raise CalibrationError(f"calibration mismatch {abs(lam2 - lam1):.3e}")
    return CalibrationResult(float(beta2), lam2, lam1, ladder)


# ---------------------------------------------------------------- comparison


@dataclass
class ComparisonReport:
    lambda1: float
    lambda2: float
    mode: str
    compact_radius: float
    hypotheses: dict  # name -> {"pass": bool, ...}
    C: float
    C_location: tuple
    ratio_oscillation: float
    conclusions: dict
    remark_check: dict | None = None

    @property
    def hypotheses_hold(self) -> bool:
        return all(h["pass"] for h in self.hypotheses.values())

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "mode": self.mode,
            "compact_radius": self.compact_radius,
            "hypotheses": self.hypotheses,
            "hypotheses_hold": self.hypotheses_hold,
            "C": self.C,
            "C_location": list(self.C_location),
            "ratio_oscillation": self.ratio_oscillation,
            "conclusions": self.conclusions,
            "remark_check": self.remark_check,
        }


def _sample(candidate, grid: Grid):
    """Interior and boundary values of a candidate function."""
    if isinstance(candidate, np.ndarray):
        if candidate.shape != (grid.n,):
            raise ValueError("candidate vector must live on the interior nodes of the largest grid")
        return candidate, np.zeros(len(grid.boundary_lattice))
    f = as_field(candidate, grid.d)
    return f.evaluate(grid.points), f.evaluate(grid.boundary_points)


def liouville_compare(spec1: OperatorSpec, spec2: OperatorSpec, candidate, solver: SolverConfig,
                      mode: str = "ordered", compact_radius: float | None = None,
                      supersolution=None, ground_state1=None, ground_state2=None,
                      region: float = 0.5,
                      lam_tol: float = 1e-6, ratio_tol: float = 1e-3,
                      residual_tol: float = 1e-8, vanish_tol: float = 1e-3) -> ComparisonReport:
    """Numerical check of the Liouville-type comparison between ``P1 = L1 + V1`` and ``P2``.

    ``mode`` selects the potential hypothesis: ``"ordered"`` (``V2 >= V1``
    outside ``K``), ``"supersolution"`` (``L1 phi + max(V1, V2) phi <= lam1 phi``
    outside ``K`` for the supplied ``supersolution``) or ``"vanishing"``
    (``V1 - V2`` small at the outer boundary).  ``K`` defaults to the
    smallest origin-centred ball containing the grid support of ``V2 - V1``.

    The candidate is either a field or a vector on the interior nodes of the
    largest grid.  Ratios (the constant ``C`` and the oscillation of
    ``Psi / Psi2*``) are taken over ``|x| <= region * R_max`` where the
    Dirichlet truncation has little influence.  ``ground_state1`` and
    ``ground_state2`` replace the Dirichlet eigenvectors by known ground states.
    """
    if mode not in ("ordered", "supersolution", "vanishing"):
        raise ValueError(f"unknown comparison mode {mode!r}")
    c1 = solver.curve(spec1, keep_pairs=True)
    c2 = solver.curve(spec2, keep_pairs=True)
    lam1, lam2 = c1.lam_star, c2.lam_star
    grid = c1.pairs[-1].grid
    pts, h = grid.points, grid.h
    psi1 = c1.pairs[-1].psi
    psi2 = c2.pairs[-1].psi
    if ground_state1 is not None:
        psi1 = as_field(ground_state1, grid.d).evaluate(pts)
    if ground_state2 is not None:
        psi2 = as_field(ground_state2, grid.d).evaluate(pts)
    u, ub = _sample(candidate, grid)
    if not np.any(u > 0):
        raise ValueError("candidate has vanishing positive part on the grid")
    rad = grid.radii()
    V1 = spec1.V.grid_values(pts, h)
    V2 = spec2.V.grid_values(pts, h)
    if compact_radius is None:
        compact_radius = _support_radius(V2 - V1, pts) + float(np.max(h)) if np.any(
            np.abs(V2 - V1) > 1e-12) else 0.0
    outside = rad > compact_radius
    hyp = {}
    scale_u = float(np.abs(u).max())
    if mode == "ordered":
        gap = (V2 - V1)[outside]
        worst = float(gap.min()) if gap.size else 0.0
        hyp["potential_order"] = {"pass": worst >= -1e-12, "min_V2_minus_V1_outside_K": worst}
    elif mode == "supersolution":
        if supersolution is None:
            raise ValueError("supersolution mode needs a supersolution candidate")
        Vt = np.maximum(V1, V2)
        p1 = build_discrete_operator(spec1, grid).with_potential_values(Vt)
        phi, phib = _sample(supersolution, grid)
        if np.any(phi <= 0):
            raise ValueError("supersolution must be positive")
        res = (p1.apply_full(phi, phib) - lam1 * phi)[outside]
        worst = float(res.max() / np.abs(phi).max()) if res.size else 0.0
        hyp["supersolution"] = {"pass": worst <= residual_tol, "max_residual_outside_K": worst}
    else:
        diff = np.abs(V1 - V2)
        sup = float(diff.max())
        shell = rad >= rad.max() - float(np.max(h)) * 1.01
        edge = float(diff[shell].max())
        hyp["vanishing_at_boundary"] = {"pass": sup == 0 or edge < vanish_tol * sup,
                                        "boundary_max": edge, "sup": sup}
    p2 = build_discrete_operator(spec2, grid)
    sub = p2.apply_full(u, ub) - lam1 * u
    worst_sub = float(sub.min() / scale_u)
    hyp["subsolution"] = {"pass": worst_sub >= -residual_tol, "min_residual": worst_sub}

    inner = rad <= region * grid.radius
    ratio = np.where(inner, np.maximum(u, 0.0) / psi1, -np.inf)
    k = int(np.argmax(ratio))
    C = float(ratio[k])
    hyp["bound"] = {"pass": bool(np.isfinite(C)), "C": C,
                    "holds_on_grid": bool(np.all(np.maximum(u, 0)[inner] <= C * psi1[inner]
                                                 * (1 + 1e-12)))}
    q = u[inner] / psi2[inner]
    q = q / np.abs(q).max()
    osc = float(q.max() - q.min())
    concl = {
        "equal_eigenvalues": abs(lam1 - lam2) < lam_tol,
        "ratio_constant": osc < ratio_tol,
    }
    if all(v["pass"] for v in hyp.values()):
        concl["verdict"] = ("candidate is a ground state of P2 - lambda2"
                            if concl["equal_eigenvalues"] and concl["ratio_constant"]
                            else "hypotheses hold but conclusions fail numerically")
        if concl["ratio_constant"] and np.ptp(psi2[inner] / psi2[inner].max()) < ratio_tol:
            concl["verdict"] = "candidate must be constant"
    else:
        concl["verdict"] = "hypotheses not met; no conclusion"

    remark = None
    dV = V2 - V1
    if np.all(dV <= 1e-14) and np.any(dV < -1e-12):
        q12 = psi2[inner] / psi1[inner]
        osc12 = float(np.ptp(q12 / q12.max()))
        remark = {
            "V2_below_V1": True,
            "lambda2_below_lambda1": lam2 < lam1 - lam_tol,
            "ratio_psi2_psi1_oscillation": osc12,
            "impossibility_flagged": bool(lam2 < lam1 - lam_tol or osc12 >= ratio_tol),
        }
    return ComparisonReport(lam1, lam2, mode, float(compact_radius), hyp, C,
                            tuple(float(v) for v in pts[k]), osc, concl, remark)


def sign_change_audit(spec: OperatorSpec, candidate, solver: SolverConfig,
                      recurrent: bool | None, residual_tol: float = 2e-2) -> dict:
    """Check a bounded sign-changing solution of ``L psi + V psi = 0``.

    Such a solution forces ``lambda*(V) > 0`` for a recurrent base process;
    the verdict is cross-checked against the eigenvalue curve.
    """
    if recurrent is not True:
        raise ValueError("sign-change audit needs a recurrent base process")
    grid = solver.grid(spec.d)
    u, ub = _sample(candidate, grid)
    scale = float(np.abs(u).max())
    report = {"max": float(u.max()), "min": float(u.min()), "bounded": bool(np.isfinite(scale))}
    if not np.any(u > 0):
        report.update(verdict="precondition failed: positive part vanishes", sign_changing=False)
        return report
    tiny = 1e-12 * scale
    sign_changing = bool(u.min() < -tiny and u.max() > tiny)
    report["sign_changing"] = sign_changing
    if not sign_changing:
        report["verdict"] = "no verdict: candidate does not change sign"
        return report
    res = build_discrete_operator(spec, grid).apply_full(u, ub)
    report["residual"] = float(np.abs(res).max() / scale)
    if report["residual"] > residual_tol:
        raise ValueError(
            f"candidate residual {report['residual']:.3e} exceeds {residual_tol:g}; "
            "not certified as a solution"
        )
    curve = solver.curve(spec)
    lo, hi = curve.bracket
    report.update(
        verdict="lambda*(V) > 0 expected",
        lambda_star=curve.lam_star,
        bracket=[lo, hi],
        confirmed=bool(lo > 0),
    )
    return report
