"""Monotone finite-difference assembly of ``L + V`` on masked lattices."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import Grid
from .operators import CoefficientError, OperatorSpec

__all__ = ["DiscreteProblem", "MonotonicityError", "build_discrete_operator"]

_SIGN_TOL = 1e-12


class MonotonicityError(ValueError):
    """Cross diffusion too strong for the positivity-preserving stencil."""

    def __init__(self, message, node=None, value=None):
        self.node = node
        self.value = value
        super().__init__(message)


@dataclass(eq=False)
class DiscreteProblem:
    grid: Grid
    A: sp.csr_matrix  # interior x interior, represents L + V
    B: sp.csr_matrix  # interior x boundary couplings (Dirichlet data)
    V: np.ndarray  # diagonal potential values
    upwind: np.ndarray  # (n, d) int8, +1 forward / -1 backward difference
    spec: OperatorSpec | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def apply(self, u) -> np.ndarray:
        return self.A @ u

    def apply_full(self, u_interior, u_boundary) -> np.ndarray:
        """``(L+V)u`` at interior nodes with boundary data ``u_boundary``."""
        return self.A @ u_interior + self.B @ u_boundary

    def apply_function(self, fn) -> np.ndarray:
        """Apply the discrete operator to a function sampled on all nodes."""
        g = self.grid
        return self.apply_full(fn(g.points), fn(g.boundary_points))

    def shifted(self, c: float) -> "DiscreteProblem":
        """Same scheme with ``V`` replaced by ``V + c``."""
        A = (self.A + c * sp.identity(self.n, format="csr")).tocsr()
        return DiscreteProblem(self.grid, A, self.B, self.V + c, self.upwind, self.spec,
                               dict(self.meta, shift=self.meta.get("shift", 0.0) + c))

    def with_potential_values(self, V_new) -> "DiscreteProblem":
        V_new = np.asarray(V_new, dtype=float)
        A = (self.A + sp.diags(V_new - self.V)).tocsr()
        return DiscreteProblem(self.grid, A, self.B, V_new, self.upwind, self.spec, dict(self.meta))

    def offdiagonal_min(self) -> float:
        A = self.A.tocoo()
        off = A.data[A.row != A.col]
        mins = [off.min() if off.size else 0.0]
        if self.B.nnz:
            mins.append(self.B.data.min())
        return float(min(mins))


def build_discrete_operator(spec: OperatorSpec, grid: Grid, check: bool = True) -> DiscreteProblem:
    """Assemble the monotone scheme for ``spec`` on ``grid``.

    Diagonal diffusion uses the three-point stencil.  A mixed term
    ``2 a_ij d_ij`` uses the seven-point splitting along the diagonal that
    matches the sign of ``a_ij``, which keeps all couplings nonnegative as
    long as ``|a_ij| <= a_ii h_j / h_i`` (and symmetrically).  Drift is
    upwinded per component.  ``V`` sits on the diagonal, using
    :meth:`Field.grid_values` so indicators enter as cell fractions.
    """
    if spec.d != grid.d:
        raise ValueError(f"operator dimension {spec.d} does not match grid dimension {grid.d}")
    d, h = grid.d, grid.h
    pts = grid.points
    n = grid.n
    with np.errstate(all="ignore"):
        a = spec.diffusion(pts)
        b = spec.drift(pts)
        V = np.asarray(spec.V.grid_values(pts, h), dtype=float)
    for name, arr in (("diffusion", a), ("drift", b), ("potential", V)):
        bad = ~np.isfinite(arr.reshape(n, -1)).all(axis=1)
        if bad.any():
            raise CoefficientError(f"non-finite {name} on the grid", pts[np.argmax(bad)])
    a = 0.5 * (a + np.swapaxes(a, 1, 2))

    diag = V.copy()
    offs: list[tuple] = []  # (lattice offset tuple, weights array)

    def unit(i, s):
        e = [0] * d
        e[i] = s
        return e

    for i in range(d):
        c = a[:, i, i] / h[i] ** 2
        offs.append((unit(i, 1), c))
        offs.append((unit(i, -1), c))
        diag -= 2 * c
    for i in range(d):
        for j in range(i + 1, d):
            aij = a[:, i, j]
            c = np.abs(aij) / (h[i] * h[j])
            pos = aij >= 0
            for si, sj in ((1, 1), (-1, -1)):
                e = [0] * d
                e[i], e[j] = si, sj
                offs.append((e, np.where(pos, c, 0.0)))
            for si, sj in ((1, -1), (-1, 1)):
                e = [0] * d
                e[i], e[j] = si, sj
                offs.append((e, np.where(pos, 0.0, c)))
            for k in (i, j):
                offs.append((unit(k, 1), -c))
                offs.append((unit(k, -1), -c))
            diag += 2 * c
    upwind = np.where(b > 0, 1, -1).astype(np.int8)
    upwind[b == 0] = 0
    for i in range(d):
        bi = b[:, i]
        fwd = np.where(bi > 0, bi / h[i], 0.0)
        bwd = np.where(bi < 0, -bi / h[i], 0.0)
        offs.append((unit(i, 1), fwd))
        offs.append((unit(i, -1), bwd))
        diag -= fwd + bwd

    rows_a, cols_a, vals_a = [np.arange(n)], [np.arange(n)], [diag]
    rows_b, cols_b, vals_b = [], [], []
    for e, w in offs:
        keep = w != 0
        if not keep.any():
            continue
        nb = grid.lattice[keep] + np.asarray(e)
        ii, bi = grid.lookup(nb)
        src = np.nonzero(keep)[0]
        wk = w[keep]
        if np.any((ii < 0) & (bi < 0)):
            raise AssertionError("stencil neighbour missing from the node set")
        m = ii >= 0
        rows_a.append(src[m]), cols_a.append(ii[m]), vals_a.append(wk[m])
        m = bi >= 0
        rows_b.append(src[m]), cols_b.append(bi[m]), vals_b.append(wk[m])
    A = sp.coo_matrix(
        (np.concatenate(vals_a), (np.concatenate(rows_a), np.concatenate(cols_a))), shape=(n, n)
    ).tocsr()
    nb_total = len(grid.boundary_lattice)
    if rows_b:
        B = sp.coo_matrix(
            (np.concatenate(vals_b), (np.concatenate(rows_b), np.concatenate(cols_b))),
            shape=(n, nb_total),
        ).tocsr()
    else:
        B = sp.csr_matrix((n, nb_total))
    A.sum_duplicates()
    B.sum_duplicates()

    prob = DiscreteProblem(grid, A, B, V, upwind, spec,
                           {"scheme": "central diffusion, 7-point mixed, upwind drift"})
    if check:
        _check_signs(prob, a)
    return prob


def _check_signs(prob: DiscreteProblem, a) -> None:
    scale = max(1.0, float(np.abs(prob.A.diagonal()).max()))
    A = prob.A.tocoo()
    off = A.row != A.col
    worst_val, worst_row = 0.0, None
    if off.any():
        k = int(np.argmin(A.data[off]))
        worst_val, worst_row = float(A.data[off][k]), int(A.row[off][k])
    if prob.B.nnz:
        Bc = prob.B.tocoo()
        k = int(np.argmin(Bc.data))
        if Bc.data[k] < worst_val:
            worst_val, worst_row = float(Bc.data[k]), int(Bc.row[k])
    if worst_val < -_SIGN_TOL * scale:
        node = tuple(float(v) for v in prob.grid.points[worst_row])
        raise MonotonicityError(
            f"cross diffusion breaks the monotone stencil: coupling {worst_val:.3e} at x={node}; "
            f"need |a_ij| <= min(a_ii, a_jj) (a={a[worst_row].tolist()})",
            node=node,
            value=worst_val,
        )
