"""Euler-Maruyama path functionals for hitting problems of ``dX = b dt + sigma dW``.

Every path draws its noise from its own counter-based stream keyed by the
master seed and the path index, so results do not depend on how paths are
split across workers.  Means and variances are reduced with ``math.fsum``.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from statsmodels.stats.proportion import proportion_confint

from . import backend
from .eigen import EigenPair
from .expr import ProgramBuilder
from .fields import Field, as_field
from .grid import Grid
from .operators import OperatorSpec

__all__ = [
    "SimConfig",
    "PathRecords",
    "FkEstimate",
    "TwistedDrift",
    "simulate_hitting",
    "fk_estimate",
    "verify_representation",
    "twisted_simulate",
    "necessary_condition_compare",
    "CAUSES",
]

HIT, CENS_T, CENS_R, INVALID, LEFT_BOX, LOW_WEIGHT = 0, 1, 2, 3, 4, 5
CAUSES = {
    HIT: "hit",
    CENS_T: "horizon",
    CENS_R: "kill radius",
    INVALID: "invalid",
    LEFT_BOX: "left validity box",
    LOW_WEIGHT: "negligible weight",
}
Z95 = 1.959963984540054


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``weight_floor`` stops a path once its Feynman-Kac weight
    ``exp(int V - lam t)`` drops below the floor.  It is only accepted when
    ``V - lam`` is known to be nonpositive, so the weight cannot recover and
    the dropped contribution is bounded by ``floor * sup psi``.
    """

    dt: float = 1e-2
    t_max: float = 100.0
    r_max: float = math.inf
    paths: int = 1000
    seed: int = 0
    workers: int = 1
    chunk: int = 2048
    bridge: bool = True
    weight_floor: float | None = None
    backend: str | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.t_max / self.dt >= 2**62:
            raise ValueError("t_max/dt does not fit in a 64-bit step count")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.workers < 1 or self.chunk < 1:
            raise ValueError("workers and chunk must be positive")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_max / self.dt - 1e-9))

    def describe(self) -> dict:
        return {
            "dt": self.dt, "t_max": self.t_max, "r_max": self.r_max, "paths": self.paths,
            "seed": self.seed, "bridge": self.bridge, "weight_floor": self.weight_floor,
            "n_steps": self.n_steps,
        }


# ----------------------------------------------------------------- twisting


@dataclass(frozen=True, eq=False)
class TwistedDrift:
    """Drift correction ``2 a grad(log Psi)`` of the ground-state transform.

    Either sampled from a grid eigenfunction (central differences of
    ``log Psi`` with multilinear interpolation) or given as expressions for
    the full correction.
    """

    d: int
    kind: str  # "none", "grid" or "analytic"
    grad: np.ndarray | None = None  # dense (*dims, d) gradient of log Psi
    origin: np.ndarray | None = None
    h: np.ndarray | None = None
    exprs: tuple = ()
    box: tuple | None = None  # (lo, hi) corners where the correction is defined

    @classmethod
    def trivial(cls, d: int) -> "TwistedDrift":
        return cls(d, "none")

    @classmethod
    def from_expressions(cls, exprs, d: int) -> "TwistedDrift":
        fields = tuple(as_field(e, d) for e in exprs)
        if len(fields) != d:
            raise ValueError("need one correction expression per coordinate")
        return cls(d, "analytic", exprs=fields)

    @classmethod
    def from_grid(cls, grid: Grid, psi) -> "TwistedDrift":
        psi = np.asarray(psi, dtype=float)
        if psi.shape != (grid.n,) or not np.all(psi > 0):
            raise ValueError("psi must be strictly positive on the interior nodes")
        dense = grid.to_dense(np.log(psi), fill=np.nan)
        d = grid.d
        grad = np.full(dense.shape + (d,), np.nan)
        for i in range(d):
            fwd = np.roll(dense, -1, axis=i)
            bwd = np.roll(dense, 1, axis=i)
            g = (fwd - bwd) / (2 * grid.h[i])
            edge = [slice(None)] * d
            edge[i] = slice(0, 1)
            g[tuple(edge)] = np.nan
            edge[i] = slice(-1, None)
            g[tuple(edge)] = np.nan
            grad[..., i] = g
        ok = np.all(np.isfinite(grad), axis=-1)
        idx = np.argwhere(ok)
        origin = grid.dense_origin
        lo = origin + idx.min(axis=0) * grid.h
        hi = origin + idx.max(axis=0) * grid.h
        return cls(d, "grid", np.ascontiguousarray(grad), origin, grid.h.copy(), box=(lo, hi))

    def in_box(self, x) -> bool:
        if self.box is None:
            return True
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.box[0]) and np.all(x <= self.box[1]))

    def correction(self, spec: OperatorSpec, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "none":
            return np.zeros_like(pts)
        if self.kind == "analytic":
            return np.stack([f.evaluate(pts) for f in self.exprs], axis=1)
        axes = [self.origin[i] + self.h[i] * np.arange(self.grad.shape[i]) for i in range(self.d)]
        interp = RegularGridInterpolator(axes, self.grad, bounds_error=False, fill_value=np.nan)
        g = interp(pts)
        return 2 * np.einsum("nij,nj->ni", spec.diffusion(pts), g)


# ------------------------------------------------------------------ kernel io


def _compile_slots(spec: OperatorSpec, extra: Sequence[Field] = (), potential=True):
    d = spec.d
    fields = list(spec.b)
    fields += [spec.a[i][j] for i in range(d) for j in range(i, d)]
    fields.append(spec.V if potential else as_field(0.0, d))
    fields += list(extra)
    builder = ProgramBuilder()
    offsets, is_const, values = [0], [], []
    for f in fields:
        c = f.constant_value
        if c is not None:
            is_const.append(1)
            values.append(float(c))
        else:
            builder.depth = 0
            f.emit(builder)
            is_const.append(0)
            values.append(0.0)
        offsets.append(len(builder.code))
    code, consts = builder.finish()
    if consts.size == 0:
        consts = np.zeros(1)
    if code.size == 0:
        code = np.zeros(2, dtype=np.int32)
    return (code, np.asarray(offsets, dtype=np.int32), np.asarray(is_const, dtype=np.uint8),
            np.asarray(values, dtype=float), consts)


@dataclass
class PathRecords:
    cause: np.ndarray
    tau: np.ndarray
    int_v: np.ndarray
    hit_point: np.ndarray
    steps: np.ndarray
    x0: np.ndarray
    r: float
    backend: str

    @property
    def n(self) -> int:
        return len(self.cause)

    def counts(self) -> dict:
        return {CAUSES[k]: int(np.count_nonzero(self.cause == k)) for k in CAUSES}

    def fraction(self, *causes) -> float:
        return float(np.isin(self.cause, causes).sum()) / self.n

    @property
    def censored_fraction(self) -> float:
        return self.fraction(CENS_T, CENS_R, LEFT_BOX)

    @property
    def hit(self) -> np.ndarray:
        return self.cause == HIT

    def to_csv(self, limit: int | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.hit_point.shape[1]
        w.writerow(["path", "cause", "tau", "int_V"] + [f"x{i + 1}" for i in range(d)])
        for p in range(self.n if limit is None else min(limit, self.n)):
            w.writerow([p, CAUSES[int(self.cause[p])], repr(float(self.tau[p])),
                        repr(float(self.int_v[p]))] + [repr(float(v)) for v in self.hit_point[p]])
        return buf.getvalue()


def simulate_hitting(spec: OperatorSpec, x0, r: float, cfg: SimConfig,
                     twisted: TwistedDrift | None = None, lam: float = 0.0,
                     potential: bool = True) -> PathRecords:
    """Simulate paths from ``x0`` until they enter the closed ball ``B_r``.

    Each step is ``X <- X + (b + c) dt + L sqrt(dt) xi`` with ``L`` the
    Cholesky factor of ``2a`` and ``c`` the optional twisted correction.
    With ``cfg.bridge`` a step that ends outside ``B_r`` still counts as a
    hit with the Brownian-bridge crossing probability
    ``exp(-d0 d1 / (n^T a n dt))`` (``d0``, ``d1`` the distances to the
    sphere at both ends).  ``int V`` is accumulated by the trapezoid rule.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (spec.d,):
        raise ValueError(f"x0 must have {spec.d} coordinates")
    twisted = twisted or TwistedDrift.trivial(spec.d)
    if twisted.d != spec.d:
        raise ValueError("twisted drift dimension mismatch")
    if twisted.kind == "grid" and np.linalg.norm(x0) > r and not twisted.in_box(x0):
        raise ValueError("x0 lies outside the validity box of the twisted drift")
    log_floor = -1e308
    if cfg.weight_floor is not None:
        vmax = spec.V.constant_value if potential else 0.0
        if vmax is None or vmax - lam > 0:
            raise ValueError("weight_floor needs a constant potential with V - lam <= 0")
        log_floor = math.log(cfg.weight_floor)
    extra = twisted.exprs if twisted.kind == "analytic" else ()
    code, offsets, is_const, values, consts = _compile_slots(spec, extra, potential)
    kern = backend.get(cfg.backend)
    n = cfg.paths
    cause = np.empty(n, dtype=np.int8)
    tau = np.empty(n)
    int_v = np.empty(n)
    hit = np.empty((n, spec.d))
    steps = np.empty(n, dtype=np.int64)
    grid_kw = {}
    if twisted.kind == "grid":
        grid_kw = dict(grad=twisted.grad.reshape(-1),
                       grad_dims=np.asarray(twisted.grad.shape[:-1], dtype=np.int64),
                       grad_origin=np.asarray(twisted.origin, dtype=float),
                       grad_h=np.asarray(twisted.h, dtype=float))

    def run(start, stop):
        kern.simulate(spec.d, code, offsets, is_const, values, consts, len(extra), x0,
                      float(r), float(cfg.r_max), float(cfg.dt), cfg.n_steps, int(cfg.seed),
                      int(start), cause[start:stop], tau[start:stop], int_v[start:stop],
                      hit[start:stop], steps[start:stop], bool(cfg.bridge), float(lam),
                      float(log_floor), **grid_kw)

    chunks = [(s, min(s + cfg.chunk, n)) for s in range(0, n, cfg.chunk)]
    if cfg.workers == 1 or len(chunks) == 1:
        for s, e in chunks:
            run(s, e)
    else:
        with ThreadPoolExecutor(cfg.workers) as pool:
            list(pool.map(lambda c: run(*c), chunks))
    return PathRecords(cause, tau, int_v, hit, steps, x0, float(r),
                       "python" if kern.__name__.endswith("_fallback") else "compiled")


# ----------------------------------------------------------------- estimates


@dataclass
class FkEstimate:
    mean: float
    stderr: float
    paths: int
    censored_fraction: float
    counts: dict
    description: str
    values: np.ndarray | None = field(default=None, repr=False)

    def ci(self, z: float = Z95) -> tuple:
        return (self.mean - z * self.stderr, self.mean + z * self.stderr)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "paths": self.paths,
                "censored_fraction": self.censored_fraction, "counts": self.counts,
                "functional": self.description}


def _mean_se(values: np.ndarray) -> tuple:
    n = len(values)
    m = math.fsum(values) / n
    if n < 2:
        return m, 0.0
    var = math.fsum((values - m) ** 2) / (n - 1)
    return m, math.sqrt(var / n)


def fk_estimate(rec: PathRecords, lam: float = 0.0, psi: Callable | None = None,
                description: str = "") -> FkEstimate:
    """Lower-bound estimator of ``E[exp(int (V - lam)) psi(X_tau) 1{tau < inf}]``.

    Censored, invalid and low-weight paths contribute zero.
    """
    vals = np.zeros(rec.n)
    h = rec.hit
    if h.any():
        w = np.exp(rec.int_v[h] - lam * rec.tau[h])
        if psi is not None:
            w = w * np.asarray(psi(rec.hit_point[h]), dtype=float)
        vals[h] = w
    m, se = _mean_se(vals)
    return FkEstimate(m, se, rec.n, rec.censored_fraction, rec.counts(),
                      description or "E[exp(int(V - lam)) psi(X_tau) 1{tau<inf}]", vals)


def _as_psi(psi, d: int):
    """Callable ``points -> values`` for a field, a constant or an eigenpair."""
    if isinstance(psi, EigenPair):
        g = psi.grid
        dense = g.to_dense(psi.psi, fill=0.0)
        axes = [g.dense_origin[i] + g.h[i] * np.arange(dense.shape[i]) for i in range(d)]
        interp = RegularGridInterpolator(axes, dense, bounds_error=False, fill_value=0.0)
        return lambda pts: interp(np.atleast_2d(pts)), float(psi.psi.max())
    if callable(psi) and not isinstance(psi, Field):
        return psi, None
    f = as_field(psi, d)
    c = f.constant_value
    return f.evaluate, (abs(c) if c is not None else None)


def verify_representation(spec: OperatorSpec, psi, lam: float, r: float, x0s, cfg: SimConfig,
                          return_bound: float | None = None, censor_cap: float = 0.2,
                          psi_sup: float | None = None) -> dict:
    """Compare ``psi(x0)`` with its stochastic representation at each ``x0``.

    The estimate is a lower bound.  Censored paths widen the upper end of
    the ratio interval by their fraction times a bound on what each could
    still contribute: ``return_bound`` for paths stopped at the kill radius
    (for example ``r / R_max`` for transient Brownian motion), otherwise
    ``sup psi / psi(x0)`` when ``V - lam <= 0`` is known, else infinity.
    The verdict is inconclusive when this censoring slack exceeds
    ``censor_cap``.
    """
    psi_fn, sup_auto = _as_psi(psi, spec.d)
    sup = psi_sup if psi_sup is not None else sup_auto
    vconst = spec.V.constant_value
    nonpos = vconst is not None and vconst - lam <= 0
    rows = []
    for x0 in x0s:
        x0 = np.asarray(x0, dtype=float)
        p0 = float(np.asarray(psi_fn(x0[None, :])).ravel()[0])
        if not p0 > 0:
            raise ValueError(f"psi must be positive at x0={x0.tolist()}")
        rec = simulate_hitting(spec, x0, r, cfg, lam=lam)
        est = fk_estimate(rec, lam, psi_fn)
        lo, hi = est.ci()
        generic = (sup / p0) if (nonpos and sup is not None) else math.inf
        b_R = return_bound if return_bound is not None else generic
        b_T = generic
        fR = rec.fraction(CENS_R)
        fT = rec.fraction(CENS_T, LEFT_BOX)
        slack = (fR * b_R if fR else 0.0) + (fT * b_T if fT else 0.0)
        r_lo, r_hi = lo / p0, hi / p0
        upper = r_hi + slack
        if slack > censor_cap:
            verdict = "inconclusive"
        elif upper < 1.0:
            verdict = "strict deficiency"
        elif r_lo <= 1.0 <= upper:
            verdict = "consistent with ground state"
        else:
            verdict = "inconsistent"
        rows.append({
            "x0": x0.tolist(),
            "psi_x0": p0,
            "estimate": est.mean,
            "stderr": est.stderr,
            "ratio": est.mean / p0,
            "ratio_ci": [r_lo, r_hi],
            "ratio_interval": [r_lo, upper],
            "censored_fraction": est.censored_fraction,
            "censoring_slack": slack,
            "counts": est.counts,
            "verdict": verdict,
        })
    verdicts = {row["verdict"] for row in rows}
    if "inconclusive" in verdicts:
        overall = "inconclusive"
    elif "strict deficiency" in verdicts:
        overall = "strict deficiency"
    elif verdicts == {"consistent with ground state"}:
        overall = "consistent with ground state"
    else:
        overall = "inconsistent"
    return {"rows": rows, "verdict": overall, "lambda": lam, "r": r, "config": cfg.describe()}


def twisted_simulate(drift: TwistedDrift, spec: OperatorSpec, x0, r: float, cfg: SimConfig,
                     T_ladder: Sequence[float], box_cap: float = 0.05, level: float = 0.95,
                     plateau_slope: float = 0.01) -> dict:
    """Hitting-probability curve ``T -> P(tau_r <= T)`` of the twisted process.

    The potential plays no role in the twisted dynamics.  The verdict is
    recurrent-consistent when the curve reaches ``level`` at the largest
    ``T``; transient-consistent when it stays below and the last increment
    per unit ``log T`` is under ``plateau_slope``.
    """
    T_ladder = sorted(float(t) for t in T_ladder)
    if T_ladder[-1] > cfg.t_max + 1e-12:
        raise ValueError("T ladder exceeds the simulation horizon")
    rec = simulate_hitting(spec, x0, r, cfg, twisted=drift, potential=False)
    left = rec.fraction(LEFT_BOX)
    if left > box_cap:
        raise RuntimeError(
            f"{100 * left:.1f}% of paths left the validity box; enlarge the grid or reduce T"
        )
    n = rec.n
    hit = rec.hit
    curve = []
    for T in T_ladder:
        k = int(np.count_nonzero(hit & (rec.tau <= T + 1e-12)))
        lo, hi = proportion_confint(k, n, alpha=0.05, method="wilson")
        curve.append({"T": T, "P_hat": k / n, "wilson_lo": float(lo), "wilson_hi": float(hi)})
    final = curve[-1]["P_hat"]
    slope = None
    if len(curve) > 1:
        a, b = curve[-2], curve[-1]
        slope = (b["P_hat"] - a["P_hat"]) / math.log(b["T"] / a["T"])
    if final >= level:
        verdict = "recurrent-consistent"
    elif slope is not None and slope < plateau_slope:
        verdict = "transient-consistent"
    else:
        verdict = "inconclusive"
    return {"curve": curve, "verdict": verdict, "final": final, "plateau_slope": slope,
            "counts": rec.counts(), "drift": drift.kind, "config": cfg.describe()}


def _same_diffusion(s1: OperatorSpec, s2: OperatorSpec) -> bool:
    if s1.d != s2.d:
        return False
    a_eq = all(s1.a[i][j].describe() == s2.a[i][j].describe()
               for i in range(s1.d) for j in range(s1.d))
    return a_eq and all(f.describe() == g.describe() for f, g in zip(s1.b, s2.b))


def necessary_condition_compare(spec1: OperatorSpec, spec2: OperatorSpec, r: float, x0s,
                                cfg: SimConfig) -> dict:
    """Ratio of ``E[exp(int V2) 1{tau<inf}]`` to the same functional with ``V1``.

    Both runs share seeds, hence paths; the interval uses the paired delta method.
    """
    if not _same_diffusion(spec1, spec2):
        raise ValueError("both operators must share the diffusion and drift")
    rows = []
    for x0 in x0s:
        e1 = fk_estimate(simulate_hitting(spec1, x0, r, cfg))
        e2 = fk_estimate(simulate_hitting(spec2, x0, r, cfg))
        w1, w2 = e1.values, e2.values
        if e1.mean <= 0:
            raise RuntimeError("no path reached B_r; the ratio is undefined")
        q = e2.mean / e1.mean
        n = len(w1)
        c1, c2 = w1 - e1.mean, w2 - e2.mean
        var = math.fsum((c2 - q * c1) ** 2) / max(n - 1, 1) / n / e1.mean**2
        se = math.sqrt(var)
        rows.append({"x0": list(map(float, x0)), "E1": e1.mean, "E2": e2.mean,
                     "se1": e1.stderr, "se2": e2.stderr, "ratio": q, "ratio_se": se,
                     "ratio_ci": [q - Z95 * se, q + Z95 * se],
                     "censored_fraction": max(e1.censored_fraction, e2.censored_fraction)})
    k = int(np.argmax([row["ratio"] for row in rows]))
    return {"rows": rows, "C_r": rows[k]["ratio"], "C_r_ci": rows[k]["ratio_ci"], "r": r,
            "config": cfg.describe()}
