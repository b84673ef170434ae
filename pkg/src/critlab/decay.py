"""Exponential lower bounds for positive solutions, Lyapunov checks and the
Khasminskii potential condition."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gamma as gamma_fn

from .fields import Field, as_field
from .grid import Grid
from .operators import OperatorSpec

__all__ = [
    "CertificateError",
    "DecayCertificate",
    "BoundCheck",
    "kappa1",
    "make_certificate",
    "semilinear_certificate",
    "radius_ladder",
    "verify_lyapunov",
    "lower_bound_check",
    "foster_lyapunov_H",
    "khasminskii_check",
    "sphere_samples",
]


class CertificateError(ValueError):
    pass


def kappa1(M: float, eta0: float, gamma: float) -> float:
    """Critical rate ``M/(2 eta0) + sqrt(M^2/(4 eta0^2) + gamma/eta0)``."""
    return M / (2 * eta0) + math.sqrt(M * M / (4 * eta0 * eta0) + gamma / eta0)


@dataclass(frozen=True)
class DecayCertificate:
    """Constants of the barrier ``Lambda(x) = exp(-K |x|^alpha)``.

    ``status`` is ``"unverified"``, ``"verified"`` or ``"failed"``; ``r0`` and
    ``tested_range`` are filled in by :func:`verify_lyapunov`.
    """

    M: float
    eta0: float
    beta: float
    gamma: float
    alpha: float
    K: float
    kappa1: float
    r0: float | None = None
    status: str = "unverified"
    tested_range: tuple | None = None
    worst_margin: float | None = None
    notes: tuple = ()

    @property
    def admissible(self) -> bool:
        return self.K * self.alpha > self.kappa1

    @property
    def slack(self) -> float:
        return self.K * self.alpha - self.kappa1

    def barrier(self, radius) -> np.ndarray:
        return np.exp(-self.K * np.asarray(radius, dtype=float) ** self.alpha)

    def with_K(self, K: float) -> "DecayCertificate":
        """Copy with a different ``K``, reset to unverified (may be inadmissible)."""
        return replace(self, K=float(K), r0=None, status="unverified", tested_range=None,
                       worst_margin=None, notes=())

    def to_dict(self) -> dict:
        return {
            "M": self.M, "eta0": self.eta0, "beta": self.beta, "gamma": self.gamma,
            "alpha": self.alpha, "K": self.K, "kappa1": self.kappa1, "slack": self.slack,
            "r0": self.r0, "status": self.status,
            "tested_range": list(self.tested_range) if self.tested_range else None,
            "worst_margin": self.worst_margin, "notes": list(self.notes),
        }


def make_certificate(M: float, eta0: float, beta: float, gamma: float, alpha: float,
                     eps_K: float) -> DecayCertificate:
    """Certificate with ``K = (kappa1 + eps_K) / alpha``, so ``K alpha - kappa1 = eps_K``."""
    if not eta0 > 0:
        raise CertificateError("eta0 must be positive")
    if gamma < 0 or M < 0:
        raise CertificateError("M and gamma must be nonnegative")
    if not 0 <= beta <= 2:
        raise CertificateError("beta must lie in [0, 2]")
    if not alpha > 0 or alpha < beta:
        raise CertificateError("alpha must be positive and at least beta")
    if not eps_K > 0:
        raise CertificateError("eps_K must be positive")
    k1 = kappa1(M, eta0, gamma)
    return DecayCertificate(float(M), float(eta0), float(beta), float(gamma), float(alpha),
                            (k1 + eps_K) / alpha, k1)


def semilinear_certificate(M: float, eta0: float, lin_const: float, eps: float) -> DecayCertificate:
    """Certificate for ``L u = f(u)`` with ``f(s) <= lin_const * s`` on the range of ``u``.

    Writing the equation as ``L u + V u = 0`` with ``V = -f(u)/u >= -lin_const``
    reduces it to the bounded-potential case with ``gamma = lin_const``.
    """
    return make_certificate(M, eta0, 0.0, lin_const, 1.0, eps)


def radius_ladder(r_start: float, r_stop: float, factor: float = 1.25) -> np.ndarray:
    if not (r_start > 0 and r_stop >= r_start and factor > 1):
        raise ValueError("need 0 < r_start <= r_stop and factor > 1")
    n = int(math.floor(math.log(r_stop / r_start) / math.log(factor) + 1e-9)) + 1
    return r_start * factor ** np.arange(n)


def sphere_samples(d: int, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Axis points plus uniform random points on the sphere of given radius."""
    axes = np.concatenate([np.eye(d), -np.eye(d)])
    if d == 1:
        return radius * axes
    g = rng.standard_normal((max(n - len(axes), 0), d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return radius * np.concatenate([axes, g])


def _radial_terms(spec: OperatorSpec, pts: np.ndarray):
    a = spec.diffusion(pts)
    b = spec.drift(pts)
    r = np.linalg.norm(pts, axis=1)
    xax = np.einsum("ni,nij,nj->n", pts, a, pts)
    tr = np.trace(a, axis1=1, axis2=2)
    bx = np.einsum("ni,ni->n", b, pts)
    return a, r, xax, tr, bx


def _L_power_exp(c: float, alpha: float, r, xax, tr, bx):
    """``L[exp(c |x|^alpha)] / exp(c |x|^alpha)`` in closed form."""
    ca = c * alpha
    return (ca * ca * r ** (2 * alpha - 4) * xax + ca * (alpha - 2) * r ** (alpha - 4) * xax
            + ca * r ** (alpha - 2) * tr + ca * r ** (alpha - 2) * bx)


def verify_lyapunov(spec: OperatorSpec, cert: DecayCertificate, r_start: float = 1.0,
                    r_stop: float = 64.0, factor: float = 1.25, samples: int = 64,
                    seed: int = 0, rtol: float = 1e-9) -> DecayCertificate:
    """Check ``L Lambda >= gamma |x|^(2 alpha - 2) Lambda`` on a radius ladder.

    The drift bound ``|<b,x>| <= M |x|^beta``, the ellipticity ``a >= eta0``
    and the decay of ``tr a / |x|^alpha`` are sampled on the same spheres.
    The margin is reported divided by ``|x|^(2 alpha - 2) Lambda``.  ``r0``
    is the smallest ladder radius from which the inequality holds at every
    sample on every larger tested sphere; it is certified on the tested
    range only.
    """
    rng = np.random.default_rng(seed)
    radii = radius_ladder(r_start, r_stop, factor)
    ok_r, worst, notes = [], [], []
    trace_ratio = []
    for R in radii:
        pts = sphere_samples(spec.d, R, samples, rng)
        a, r, xax, tr, bx = _radial_terms(spec, pts)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(bx))):
            raise CertificateError(f"non-finite coefficients on the sphere |x|={R:g}")
        lam_min = np.linalg.eigvalsh(a)[:, 0].min()
        if lam_min < cert.eta0 * (1 - rtol):
            raise CertificateError(
                f"ellipticity {lam_min:.6g} below eta0={cert.eta0:g} at |x|={R:g}")
        drift = np.abs(bx).max()
        if drift > cert.M * R**cert.beta * (1 + rtol) + rtol:
            raise CertificateError(
                f"|<b,x>| = {drift:.6g} exceeds M |x|^beta = {cert.M * R**cert.beta:.6g} at |x|={R:g}")
        trace_ratio.append(float(tr.max() / R**cert.alpha))
        ratio = _L_power_exp(-cert.K, cert.alpha, r, xax, tr, bx) / r ** (2 * cert.alpha - 2)
        margin = ratio - cert.gamma
        worst.append(float(margin.min()))
        ok_r.append(bool(margin.min() >= 0))
    if len(trace_ratio) > 1 and trace_ratio[-1] > trace_ratio[0] * (1 + rtol):
        raise CertificateError("tr a / |x|^alpha does not decay on the tested range")
    notes.append(f"tr a/|x|^alpha = {trace_ratio[-1]:.3g} at the largest radius")
    r0 = None
    for k in range(len(radii)):
        if all(ok_r[k:]):
            r0 = float(radii[k])
            break
    tested = (float(radii[0]), float(radii[-1]))
    if r0 is None:
        return replace(cert, status="failed", tested_range=tested, worst_margin=min(worst),
                       notes=tuple(notes + ["inequality fails at the largest tested radius"]))
    idx = list(radii).index(r0)
    return replace(cert, status="verified", r0=r0, tested_range=tested,
                   worst_margin=min(worst[idx:]), notes=tuple(notes))


@dataclass
class BoundCheck:
    r: float
    C: float
    K: float
    alpha: float
    checked: int
    violations: list = field(default_factory=list)  # (point, u, bound)
    x0: tuple | None = None

    @property
    def passed(self) -> bool:
        return not self.violations

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self, max_listed: int = 20) -> dict:
        return {"r": self.r, "C": self.C, "K": self.K, "alpha": self.alpha,
                "checked": self.checked, "status": self.status,
                "violations": len(self.violations), "x0": self.x0,
                "first_violations": [dict(x=list(map(float, p)), u=u, bound=b)
                                     for p, u, b in self.violations[:max_listed]]}

    def violations_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = len(self.violations[0][0]) if self.violations else 0
        w.writerow([f"x{i + 1}" for i in range(d)] + ["u", "bound"])
        for p, u, b in self.violations:
            w.writerow([repr(float(c)) for c in p] + [repr(u), repr(b)])
        return buf.getvalue()


def box_nodes(d: int, half_width: float, h: float) -> np.ndarray:
    """Lattice ``h Z^d`` intersected with the closed cube of the given half-width."""
    m = int(math.floor(half_width / h + 1e-9))
    ax = h * np.arange(-m, m + 1)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    return np.stack([g.reshape(-1) for g in mesh], axis=1)


def lower_bound_check(u, cert: DecayCertificate, r: float, points=None, *,
                      half_width: float | None = None, h: float = 1.0, x0=None,
                      d: int | None = None) -> BoundCheck:
    """Check ``u >= C exp(-K |x|^alpha)`` at every node with ``|x| > r``.

    ``u`` is a field (evaluated on ``points``, or on the cube lattice given by
    ``half_width`` and ``h``) or an array of values at ``points``.  It is
    normalized by ``u(x0)`` (default: the node closest to the origin).  The
    constant is ``C = min u e^{K r^alpha}`` over the nodes of the shell
    ``| |z| - r | <= h sqrt(d) / 2`` approximating the sphere.
    """
    if cert.status != "verified":
        raise CertificateError("the certificate must be verified first")
    if cert.r0 > r:
        raise CertificateError(f"r={r:g} is below the verified radius r0={cert.r0:g}")
    if points is None:
        if half_width is None or d is None:
            raise ValueError("give points or (d, half_width, h)")
        points = box_nodes(d, half_width, h)
    if isinstance(points, Grid):
        h = float(points.h.max())
        points = points.points
    pts = np.asarray(points, dtype=float)
    d = pts.shape[1]
    vals = as_field(u, d).evaluate(pts) if isinstance(u, (Field, str)) else np.asarray(u, float)
    if vals.shape != (len(pts),):
        raise ValueError("u must have one value per point")
    rad = np.linalg.norm(pts, axis=1)
    i0 = int(np.argmin(rad)) if x0 is None else int(np.argmin(np.linalg.norm(pts - x0, axis=1)))
    if not vals[i0] > 0:
        raise CertificateError("u must be positive at the normalization point")
    vals = vals / vals[i0]
    shell = np.abs(rad - r) <= 0.5 * h * math.sqrt(d) + 1e-12
    if not shell.any():
        raise CertificateError("no nodes near the comparison sphere")
    if np.any(vals[shell] <= 0):
        raise CertificateError("u is nonpositive on the comparison sphere")
    # log-space keeps the comparison meaningful far below the underflow threshold
    with np.errstate(divide="ignore"):
        logu = np.log(vals)
    logC = float(logu[shell].min() + cert.K * r**cert.alpha)
    outer = rad > r
    log_bound = logC - cert.K * rad[outer] ** cert.alpha
    bad = logu[outer] < log_bound - 1e-12 * np.maximum(1.0, np.abs(log_bound))
    idx = np.nonzero(outer)[0][bad]
    viol = [(tuple(pts[i]), float(vals[i]), float(math.exp(lb)))
            for i, lb in zip(idx, log_bound[bad])]
    return BoundCheck(float(r), math.exp(logC), cert.K, cert.alpha, int(outer.sum()), viol,
                      tuple(map(float, pts[i0])))


def foster_lyapunov_H(spec: OperatorSpec, theta: float, alpha: float, ell, r_start: float = 1.0,
                      r_stop: float = 32.0, factor: float = 1.25, samples: int = 64,
                      seed: int = 0, rtol: float = 1e-6) -> dict:
    """Test ``L zeta <= (kappa - ell) zeta`` for ``zeta = exp(theta |x|^alpha)``.

    ``kappa`` is the sampled maximum of ``L zeta / zeta + ell``.  The verdict
    is pass when that maximum is finite and does not grow between the two
    largest tested radii, i.e. the defect ``L zeta/zeta + ell`` is controlled
    at infinity rather than just on the sampled range.
    """
    d = spec.d
    ell = as_field(ell, d)
    rng = np.random.default_rng(seed)
    radii = radius_ladder(r_start, r_stop, factor)
    if len(radii) < 3:
        raise ValueError("need at least three radii")
    per_radius, ell_min = [], []
    for R in radii:
        pts = sphere_samples(d, R, samples, rng)
        _, r, xax, tr, bx = _radial_terms(spec, pts)
        q = _L_power_exp(theta, alpha, r, xax, tr, bx) if theta != 0 else np.zeros(len(pts))
        lv = ell.evaluate(pts)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(lv))):
            raise CertificateError(f"non-finite values on the sphere |x|={R:g}")
        per_radius.append(float((q + lv).max()))
        ell_min.append(float(lv.min()))
    if not ell_min[-1] > min(ell_min[:-1]):
        raise CertificateError("ell is not inf-compact on the tested range")
    kappa = max(per_radius)
    m1, m2 = per_radius[-2], per_radius[-1]
    stable = m2 <= m1 + rtol * max(1.0, abs(m1))
    ok = math.isfinite(kappa) and stable
    return {
        "theta": theta, "alpha": alpha, "kappa": kappa,
        "radii": radii.tolist(), "sup_per_radius": per_radius,
        "stable_at_infinity": stable, "verdict": "pass" if ok else "fail",
        "ell": ell.describe(),
    }


def _unit_sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / gamma_fn(d / 2)


def khasminskii_check(Vplus, d: int, half_width: float = 1.5, h: float = 0.05,
                      safety_margin: float = 0.0, levels: Sequence[float] | None = None) -> dict:
    """Sup over cell centers of ``(2/((d-2) w_d)) int V+(y) |x-y|^(2-d) dy``.

    Midpoint quadrature on the cube ``[-half_width, half_width]^d`` with an odd
    number of cells so the origin is a center.  The singular cell uses the
    exact integral of ``|y|^(2-d)`` over the ball of equal volume.  With
    ``levels`` the estimate is repeated for each spacing (coarse to fine) and
    the last one decides the verdict.
    """
    if d < 3:
        raise ValueError("the condition needs d >= 3")
    Vplus = as_field(Vplus, d)
    spacings = list(levels) if levels else [h]
    out = []
    for hh in spacings:
        m = int(round(half_width / hh - 0.5))
        if m < 1:
            raise ValueError("spacing too coarse for the box")
        ax = hh * np.arange(-m, m + 1)
        mesh = np.meshgrid(*([ax] * d), indexing="ij")
        pts = np.stack([g.reshape(-1) for g in mesh], axis=1)
        v = np.asarray(Vplus.grid_values(pts, np.full(d, hh)), dtype=float)
        if np.any(v < 0):
            raise ValueError("V+ must be nonnegative")
        v = v.reshape(mesh[0].shape)
        for axis in range(d):
            lo = np.take(v, 0, axis=axis)
            hi = np.take(v, -1, axis=axis)
            if np.any(lo != 0) or np.any(hi != 0):
                raise ValueError("support of V+ reaches the quadrature box boundary")
        k = hh * np.arange(-2 * m, 2 * m + 1)
        kmesh = np.meshgrid(*([k] * d), indexing="ij")
        dist = np.sqrt(sum(g * g for g in kmesh))
        cell = hh**d
        with np.errstate(divide="ignore"):
            kern = dist ** (2.0 - d) * cell
        rho = (cell * d / _unit_sphere_area(d)) ** (1.0 / d)
        centre = tuple([2 * m] * d)
        kern[centre] = _unit_sphere_area(d) * rho * rho / 2.0
        conv = fftconvolve(v, kern, mode="same")
        pot = 2.0 / ((d - 2) * _unit_sphere_area(d)) * conv
        pot[np.abs(pot) < 1e-14 * max(1.0, np.abs(pot).max())] = 0.0
        j = np.unravel_index(int(np.argmax(pot)), pot.shape)
        out.append({"h": hh, "sup": float(pot[j]), "argmax": [float(ax[i]) for i in j],
                    "at_origin": float(pot[tuple([m] * d)])})
    sup = out[-1]["sup"]
    rel = None
    if len(out) > 1:
        rel = abs(out[-1]["sup"] - out[-2]["sup"]) / max(abs(out[-1]["sup"]), 1e-300)
    return {"levels": out, "sup": sup, "refinement_change": rel,
            "threshold": 1.0 - safety_margin,
            "verdict": "pass" if sup < 1.0 - safety_margin else "fail"}
