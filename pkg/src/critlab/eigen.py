"""Perron eigenpairs of monotone schemes, eigenvalue curves and source solves."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import DiscreteProblem, build_discrete_operator
from .fields import Field
from .grid import Grid, make_grid
from .operators import OperatorSpec

__all__ = [
    "EigenPair",
    "EigenCurve",
    "EigenSolverError",
    "MonotonicityViolation",
    "DomainPolicy",
    "principal_eigenpair",
    "eigen_curve",
    "dirichlet_source_solve",
]


class EigenSolverError(RuntimeError):
    pass


class MonotonicityViolation(RuntimeError):
    def __init__(self, message, radii=None):
        self.radii = radii
        super().__init__(message)


@dataclass
class EigenPair:
    lam: float
    psi: np.ndarray  # interior values, max-norm 1, strictly positive
    residual: float
    bracket: tuple  # Collatz-Wielandt lower/upper bounds
    iterations: int
    restarts: int = 0
    grid: Grid | None = None

    def __post_init__(self):
        if self.psi.size and not np.all(self.psi > 0):
            raise EigenSolverError("eigenvector is not strictly positive")

    def dump_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.grid.d
        w.writerow([f"x{i + 1}" for i in range(d)] + ["psi"])
        for p, v in zip(self.grid.points, self.psi):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        return buf.getvalue()


_DIRECT_MAX = {1: 10**7, 2: 200_000}
_DIRECT_MAX_3D = 4000


class _ShiftedSolver:
    """Solves ``(sI - A) y = x``: sparse LU for small or low-dimensional
    problems, algebraic multigrid accelerated BiCGStab otherwise."""

    def __init__(self, A, d: int | None, method: str = "auto"):
        self.A = A
        self.n = A.shape[0]
        if method == "auto":
            limit = _DIRECT_MAX.get(d, _DIRECT_MAX_3D) if d is not None else 20_000
            method = "direct" if self.n <= limit else "amg"
        self.method = method
        self.ident = sp.identity(self.n, format="csr")

    def factor(self, s: float):
        M = s * self.ident - self.A
        if self.method == "direct":
            lu = spla.splu(M.tocsc())
            return lu.solve
        import pyamg

        ml = pyamg.ruge_stuben_solver(M.tocsr())

        def solve(b):
            return ml.solve(b, tol=1e-13, accel="bicgstab", maxiter=200)

        return solve


def _cw_bounds(A, x):
    r = (A @ x) / x
    return float(r.min()), float(r.max()), r


def principal_eigenpair(problem: DiscreteProblem | sp.spmatrix, tol: float = 1e-10,
                        max_iter: int = 200, x0=None, method: str = "auto") -> EigenPair:
    """Perron eigenpair of a matrix with nonnegative off-diagonal entries.

    Shifted inverse iteration with an adaptive shift: the first shift
    ``s = 1 + max_i (A_ii + sum_j |A_ij|)`` makes ``sI - A`` a nonsingular
    M-matrix; later shifts sit just above the Collatz-Wielandt upper bound
    ``max_i (Ax)_i / x_i``, which keeps ``(sI - A)^{-1}`` positive while the
    bracket ``[min_i (Ax)_i/x_i, max_i (Ax)_i/x_i]`` collapses onto the
    principal eigenvalue.  Iteration stops once the bracket width is below
    ``tol * max(1, |lambda|)``.  A stall or loss of positivity triggers a
    restart with a larger safety offset; three failed restarts raise.

    ``method`` is ``"direct"`` (sparse LU), ``"amg"`` or ``"auto"``, which
    picks multigrid for large three-dimensional grids.
    """
    if isinstance(problem, DiscreteProblem):
        A, grid = problem.A, problem.grid
    else:
        A, grid = sp.csr_matrix(problem), None
    n = A.shape[0]
    A = A.tocsr()
    diag = A.diagonal()
    absrow = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    s0 = 1.0 + float((diag + absrow).max())
    solver = _ShiftedSolver(A, grid.d if grid is not None else None, method)
    last_err = None
    for restart in range(4):
        x = np.ones(n) if x0 is None or restart else np.asarray(x0, dtype=float).copy()
        if np.any(x <= 0):
            raise ValueError("start vector must be positive")
        s = s0
        offset = 10.0 ** restart
        lo = hi = None
        ok = False
        for it in range(1, max_iter + 1):
            y = solver.factor(s)(x)
            m = np.abs(y).max()
            if not np.isfinite(m) or m == 0:
                last_err = "inverse iteration produced a degenerate vector"
                break
            y /= m
            if np.any(y <= 0):
                last_err = f"lost positivity at iteration {it} (shift {s:.6g})"
                break
            x = y
            lo, hi, _ = _cw_bounds(A, x)
            scale = max(1.0, abs(hi))
            width = hi - lo
            if width < tol * scale:
                ok = True
                break
            delta = max(1e-2 * width * offset, 1e-9 * scale)
            s = hi + delta
        if ok:
            lam = 0.5 * (lo + hi)
            res = float(np.abs(A @ x - lam * x).max() / np.abs(x).max())
            return EigenPair(lam, x, res, (lo, hi), it, restart, grid)
        last_err = last_err or f"no convergence in {max_iter} iterations (bracket {lo}, {hi})"
    raise EigenSolverError(f"principal eigenpair failed after 3 restarts: {last_err}")


@dataclass(frozen=True)
class DomainPolicy:
    """How to build the truncated domain for a given outer radius."""

    shape: str = "ball"
    h: float | Callable = 0.5
    inner_radius: float = 0.0

    def spacing(self, R: float) -> float:
        return float(self.h(R)) if callable(self.h) else float(self.h)

    def grid(self, d: int, R: float) -> Grid:
        shape = self.shape
        if shape == "ball" and d == 1:
            shape = "interval"
        return make_grid(d, shape, self.spacing(R), R, self.inner_radius)


@dataclass
class EigenCurve:
    rows: list  # (R, h, lambda_R, residual)
    tol: float
    pairs: list = field(default_factory=list, repr=False)
    curve_tol: float = 1e-3

    @property
    def radii(self):
        return [r[0] for r in self.rows]

    @property
    def values(self):
        return np.array([r[2] for r in self.rows])

    @property
    def lam_star(self) -> float:
        return float(self.rows[-1][2])

    @property
    def bracket(self) -> tuple:
        v = self.values
        return (float(v[-1]), float(v[-1] + abs(v[-1] - v[-2])))

    @property
    def bracket_width(self) -> float:
        lo, hi = self.bracket
        return hi - lo

    @property
    def converged(self) -> bool:
        return self.bracket_width < self.curve_tol

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["R", "h", "lambda_R", "residual"])
        for R, h, lam, res in self.rows:
            w.writerow([repr(float(R)), repr(float(h)), repr(float(lam)), repr(float(res))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rows": [dict(R=r[0], h=r[1], lambda_R=r[2], residual=r[3]) for r in self.rows],
            "lambda_star": self.lam_star,
            "bracket": list(self.bracket),
            "bracket_width": self.bracket_width,
            "converged": self.converged,
        }


def eigen_curve(spec: OperatorSpec, radii: Sequence[float], policy: DomainPolicy | None = None,
                tol: float = 1e-10, curve_tol: float = 1e-3, max_iter: int = 200,
                keep_pairs: bool = False, check_monotone: bool = True) -> EigenCurve:
    """Dirichlet principal eigenvalues on growing domains ``B_R``.

    The estimate of the generalized principal eigenvalue is the last value;
    its bracket is ``[lam_last, lam_last + |lam_last - lam_prev|]``.
    """
    radii = [float(R) for R in radii]
    if len(radii) < 2 or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be strictly increasing with at least two entries")
    policy = policy or DomainPolicy()
    rows, pairs = [], []
    for R in radii:
        grid = policy.grid(spec.d, R)
        pair = principal_eigenpair(build_discrete_operator(spec, grid), tol=tol, max_iter=max_iter)
        rows.append((R, policy.spacing(R), pair.lam, pair.residual))
        if keep_pairs:
            pairs.append(pair)
    if check_monotone:
        for (R1, _, l1, _), (R2, _, l2, _) in zip(rows, rows[1:]):
            if l2 < l1 - 10 * tol * max(1.0, abs(l1)):
                raise MonotonicityViolation(
                    f"lambda_R decreased from {l1:.10g} (R={R1:g}) to {l2:.10g} (R={R2:g})",
                    radii=(R1, R2),
                )
    return EigenCurve(rows, tol, pairs, curve_tol)


def dirichlet_source_solve(problem: DiscreteProblem, lam: float, alpha: float,
                           source: Field | np.ndarray) -> np.ndarray:
    """Solve ``(A - (lam + alpha) I) phi = -1_B`` with zero Dirichlet data.

    ``source`` is a field (ball indicators enter as cell fractions) or the
    vector of source values at interior nodes.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    grid = problem.grid
    if isinstance(source, Field):
        f = np.asarray(source.grid_values(grid.points, grid.h), dtype=float)
    else:
        f = np.asarray(source, dtype=float)
    if not np.any(f):
        return np.zeros(problem.n)
    M = ((lam + alpha) * sp.identity(problem.n, format="csr") - problem.A).tocsc()
    Mc = M.tocoo()
    if np.any(Mc.data[Mc.row != Mc.col] > 0):
        raise EigenSolverError("shifted system is not an M-matrix")
    phi = spla.spsolve(M, f)
    if not np.all(np.isfinite(phi)):
        raise EigenSolverError("singular source system")
    if np.any(phi <= 0):
        raise EigenSolverError(
            f"nonpositive solution entry {phi.min():.3e}; is lam below the Dirichlet eigenvalue?"
        )
    return phi
