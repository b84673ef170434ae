"""Hyperplane profiles, their constant-coefficient ODE, and decay-based
uniqueness decisions."""
from __future__ import annotations

import cmath
import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .decay import kappa1 as _kappa1
from .fields import Field, as_field

__all__ = [
    "ProfileError",
    "RadonProfile",
    "OdeReport",
    "radon_profile",
    "ode_coefficients",
    "characteristic_roots",
    "ode_residual_and_roots",
    "fit_decay_exponent",
    "landis_decide",
    "reverse_poincare_check",
]

_D1 = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])
_D2 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])


class ProfileError(ValueError):
    pass


@dataclass
class RadonProfile:
    """Slice integrals ``w(s)`` of ``u`` over the hyperplanes ``x_axis = s``."""

    axis: int
    s: np.ndarray
    w: np.ndarray
    tail: np.ndarray  # fraction of slice mass on the truncation ring
    slice_bound: np.ndarray  # slice area times max |u| on the slice

    @classmethod
    def from_samples(cls, s, w, axis: int = 0) -> "RadonProfile":
        s = np.asarray(s, dtype=float)
        w = np.asarray(w, dtype=float)
        return cls(axis, s, w, np.zeros_like(w), np.full_like(w, np.inf))

    @property
    def ds(self) -> float:
        steps = np.diff(self.s)
        if steps.size == 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ProfileError("the s ladder must be uniform")
        return float(steps[0])

    def derivatives(self):
        """``(idx, w', w'')`` on ladder points with a full centered stencil.

        Sixth-order stencils when the ladder has at least seven points,
        second-order otherwise.
        """
        n = len(self.s)
        h = self.ds
        if n >= 7:
            d1, d2, half = _D1, _D2, 3
        elif n >= 3:
            d1, d2, half = np.array([-0.5, 0.0, 0.5]), np.array([1.0, -2.0, 1.0]), 1
        else:
            raise ProfileError("need at least three ladder points")
        idx = np.arange(half, n - half)
        win = np.lib.stride_tricks.sliding_window_view(self.w, 2 * half + 1)
        return idx, win @ d1 / h, win @ d2 / (h * h)

    def to_csv(self, b01: float | None = None, k: float | None = None) -> str:
        idx, w1, w2 = self.derivatives()
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["s", "w", "w_prime", "w_second", "residual"])
        for j, i in enumerate(idx):
            res = "" if b01 is None else repr(float(w2[j] + b01 * w1[j] + k * self.w[i]))
            out.writerow([repr(float(self.s[i])), repr(float(self.w[i])), repr(float(w1[j])),
                          repr(float(w2[j])), res])
        return buf.getvalue()


def radon_profile(u, d: int, axis: int = 0, s_range: tuple | None = None,
                  half_width: float = 6.0, h: float = 0.1, tail_cap: float = 0.05,
                  decay_ratio: float = 1e-3) -> RadonProfile:
    """Slice sums ``w(s) = sum u(s, xbar) h^(d-1)`` on the cube lattice.

    Hyperplanes are axis-aligned: a general direction is handled by rotating
    the coefficients instead (see :func:`ode_coefficients`).  ``tail`` is the
    share of each slice's absolute mass sitting on the outermost ring of the
    box, a proxy for the part of the hyperplane cut off by truncation.
    """
    if not 0 <= axis < d:
        raise ValueError("axis out of range")
    m = int(math.floor(half_width / h + 1e-9))
    ax = h * np.arange(-m, m + 1)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack([g.reshape(-1) for g in mesh], axis=1)
    if isinstance(u, (Field, str, int, float)):
        vals = as_field(u, d).evaluate(pts)
    else:
        vals = np.asarray(u(pts), dtype=float)
    vals = vals.reshape(mesh[0].shape)
    if not np.all(np.isfinite(vals)):
        raise ProfileError("u is not finite on the box")
    vmax = np.abs(vals).max()
    if vmax > 0:
        face = max(float(np.abs(np.take(vals, j, axis=i)).max()) for i in range(d) for j in (0, -1))
        if face >= decay_ratio * vmax:
            raise ProfileError(
                f"u does not decay at the box boundary (face max {face:.3g} vs max {vmax:.3g})")
    moved = np.moveaxis(vals, axis, 0)
    cell = h ** (d - 1)
    w = moved.reshape(len(ax), -1).sum(axis=1) * cell
    absmass = np.abs(moved).reshape(len(ax), -1).sum(axis=1)
    ring = np.zeros(moved.shape[1:], dtype=bool)
    for i in range(d - 1):
        sl = [slice(None)] * (d - 1)
        sl[i] = 0
        ring[tuple(sl)] = True
        sl[i] = -1
        ring[tuple(sl)] = True
    ringmass = np.abs(moved[:, ring]).sum(axis=1) if d > 1 else np.zeros(len(ax))
    with np.errstate(invalid="ignore", divide="ignore"):
        tail = np.where(absmass > 0, ringmass / absmass, 0.0)
    slice_bound = np.abs(moved).reshape(len(ax), -1).max(axis=1) * moved[0].size * cell
    keep = np.ones(len(ax), dtype=bool)
    if s_range is not None:
        keep = (ax >= s_range[0] - 1e-12) & (ax <= s_range[1] + 1e-12)
    prof = RadonProfile(axis, ax[keep], w[keep], tail[keep], slice_bound[keep])
    significant = absmass[keep] > 1e3 * np.finfo(float).eps * max(absmass.max(), 1e-300)
    if np.any(prof.tail[significant] > tail_cap):
        raise ProfileError(f"truncation tail above {100 * tail_cap:g}% of the slice mass")
    return prof


def ode_coefficients(b0, k: float, omega) -> tuple:
    """ODE coefficients ``(b0^1, k)`` after rotating ``omega`` onto ``e_1``.

    Only the drift component along the hyperplane normal survives the slice
    integration, so ``b0^1 = <b0, omega>``.
    """
    omega = np.asarray(omega, dtype=float)
    nrm = np.linalg.norm(omega)
    if not nrm > 0:
        raise ValueError("omega must be nonzero")
    return float(np.dot(np.asarray(b0, dtype=float), omega / nrm)), float(k)


def characteristic_roots(b01: float, k: float) -> tuple:
    """Roots of ``r^2 + b01 r + k``; real floats when the discriminant is nonnegative."""
    disc = b01 * b01 - 4.0 * k
    if disc >= 0:
        sq = math.sqrt(disc)
        # the larger-magnitude root first avoids cancellation
        q = -0.5 * (b01 + math.copysign(sq, b01))
        if q == 0:
            return (0.0, 0.0)
        r_a, r_b = q, k / q
        return (max(r_a, r_b), min(r_a, r_b))
    sq = cmath.sqrt(disc)
    return ((-b01 + sq) / 2, (-b01 - sq) / 2)


@dataclass
class OdeReport:
    b01: float
    k: float
    roots: tuple
    residual: float | None
    kappa1: float
    kappa_obs: float | None
    exact_zero: bool = False

    @property
    def root_moduli(self) -> tuple:
        return tuple(abs(r) for r in self.roots)

    @property
    def roots_within_kappa1(self) -> bool:
        return all(m <= self.kappa1 * (1 + 1e-12) for m in self.root_moduli)

    def to_dict(self) -> dict:
        def enc(z):
            return {"re": z.real, "im": z.imag} if isinstance(z, complex) else z
        return {"b01": self.b01, "k": self.k, "roots": [enc(r) for r in self.roots],
                "residual": self.residual, "kappa1": self.kappa1, "kappa_obs": self.kappa_obs,
                "exact_zero": self.exact_zero, "roots_within_kappa1": self.roots_within_kappa1}


def fit_decay_exponent(profile: RadonProfile) -> float | None:
    """Least-squares rate of ``log |w|`` over the outer half of the ladder.

    Points where ``|w|`` is below ``1e3 eps ||w||_inf`` are dropped so sign
    changes and roundoff do not enter the fit.
    """
    w = np.abs(profile.w)
    top = w.max()
    if top == 0:
        return None
    n = len(w)
    sel = np.zeros(n, dtype=bool)
    sel[n // 2:] = True
    sel &= w > 1e3 * np.finfo(float).eps * top
    if sel.sum() < 2:
        return None
    slope = np.polyfit(profile.s[sel], np.log(w[sel]), 1)[0]
    return float(-slope)


def ode_residual_and_roots(profile: RadonProfile, b01: float, k: float, M: float | None = None,
                           gamma: float | None = None) -> OdeReport:
    """Residual ``||w'' + b01 w' + k w||_inf / ||w||_inf`` and the characteristic roots.

    ``kappa1 = M/2 + sqrt(M^2/4 + gamma)`` uses ``M = |b01|`` and
    ``gamma = |k|`` unless given.
    """
    if len(profile.s) < 5:
        raise ProfileError("the profile ladder needs at least five points")
    M = abs(b01) if M is None else M
    gamma = abs(k) if gamma is None else gamma
    k1 = _kappa1(M, 1.0, gamma)
    roots = characteristic_roots(b01, k)
    wmax = np.abs(profile.w).max()
    if wmax == 0:
        return OdeReport(b01, k, roots, None, k1, None, exact_zero=True)
    idx, w1, w2 = profile.derivatives()
    res = float(np.abs(w2 + b01 * w1 + k * profile.w[idx]).max() / wmax)
    return OdeReport(b01, k, roots, res, k1, fit_decay_exponent(profile))


def landis_decide(kappa_obs: float, M: float, gamma: float, ode: OdeReport | None = None,
                  eps: float = 1e-2, eta0: float = 1.0, lam_bracket: tuple | None = None) -> dict:
    """Decide whether the decay rate forces ``u = 0``.

    The verdict is ``"u≡0 implied"`` when ``kappa_obs > kappa1 + eps`` and,
    with ODE data, every characteristic root has modulus at most
    ``kappa1``.  With ``lam_bracket`` (the comparison route for general
    diffusions) the upper end of the bracket for the generalized principal
    eigenvalue must also be nonpositive; a bracket straddling zero is
    inconclusive.
    """
    k1 = _kappa1(M, eta0, gamma)
    reasons = []
    ok = kappa_obs > k1 + eps
    if not ok:
        reasons.append(f"observed rate {kappa_obs:g} does not exceed kappa1 + eps = {k1 + eps:g}")
    if ode is not None and not ode.exact_zero:
        if not all(m <= k1 * (1 + 1e-12) for m in ode.root_moduli):
            ok = False
            reasons.append("a characteristic root decays faster than exp(-kappa1 s)")
    if lam_bracket is not None:
        if lam_bracket[1] > 0:
            ok = False
            reasons.append(
                f"lambda* bracket [{lam_bracket[0]:g}, {lam_bracket[1]:g}] is not <= 0")
    return {"verdict": "u≡0 implied" if ok else "inconclusive", "kappa1": k1,
            "kappa_obs": kappa_obs, "eps": eps, "reasons": reasons}


def reverse_poincare_check(u, d: int, r: float, C: float, centers: Sequence | None = None,
                           h: float = 0.05, M: float = 0.0, q2: float = 0.0,
                           far: float = 8.0, n_centers: int = 6) -> dict:
    """Ball-wise ratio ``int |grad u|^2 / int u^2`` at centers far from the origin.

    Each ball is integrated on a local lattice of spacing ``h`` (cell
    quadrature) with central-difference gradients.  On a pass the rate
    ``kappa = sqrt(2 (M sqrt(C) + q2 + C)) + 1`` is reported and the lower
    envelope ``v(x) >= C_kappa exp(-kappa |x|)`` is checked with ``C_kappa``
    fixed at the nearest tested center.
    """
    if r < 2 * h:
        raise ValueError("r must be at least 2h")
    f = as_field(u, d)
    if centers is None:
        centers = [np.eye(d)[0] * t for t in np.linspace(far, 2 * far, n_centers)]
    centers = [np.asarray(c, dtype=float) for c in centers]
    m = int(math.ceil(r / h)) + 1
    ax = h * np.arange(-m, m + 1)
    mesh = np.meshgrid(*([ax] * d), indexing="ij")
    offs = np.stack([g.reshape(-1) for g in mesh], axis=1)
    inball = (np.linalg.norm(offs, axis=1) < r).reshape(mesh[0].shape)
    rows = []
    for c in centers:
        vals = f.evaluate(offs + c).reshape(mesh[0].shape)
        grads = np.gradient(vals, h)
        if d == 1:
            grads = [grads]
        g2 = sum(g * g for g in grads)
        num = float(g2[inball].sum() * h**d)
        den = float((vals * vals)[inball].sum() * h**d)
        rows.append({"center": c.tolist(), "norm": float(np.linalg.norm(c)), "grad2": num,
                     "u2": den, "ratio": (num / den) if den > 0 else None})
    if any(row["u2"] == 0 for row in rows):
        return {"verdict": "unique continuation: u≡0", "rows": rows, "C": C}
    passed = all(row["ratio"] <= C for row in rows)
    out = {"verdict": "pass" if passed else "fail", "rows": rows, "C": C, "r": r}
    if passed:
        kappa = math.sqrt(2 * (M * math.sqrt(C) + q2 + C)) + 1
        base = min(rows, key=lambda row: row["norm"])
        log_ck = math.log(base["u2"]) + kappa * base["norm"]
        holds = all(math.log(row["u2"]) >= log_ck - kappa * row["norm"] - 1e-12 for row in rows)
        out.update({"kappa": kappa, "C_kappa": math.exp(log_ck), "envelope_holds": holds})
    return out
