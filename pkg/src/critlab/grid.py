"""Origin-centred lattices masked to intervals, boxes, balls and annuli.

Nodes sit at ``k * h`` for integer multi-indices ``k``, so halving ``h``
nests the coarse nodes inside the fine ones.  Interior nodes satisfy the
strict domain inequality; boundary nodes are the non-interior members of the
full ``3^d`` neighbourhood of some interior node and carry Dirichlet data.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Grid", "GridError", "make_grid"]

SHAPES = ("interval", "box", "ball", "annulus")
_EDGE_TOL = 1e-12


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Grid:
    d: int
    shape: str
    h: np.ndarray  # spacing per axis
    radius: float  # outer radius or box half-width (scalar)
    inner_radius: float
    half_widths: np.ndarray
    lattice: np.ndarray  # (n, d) integer indices of interior nodes
    boundary_lattice: np.ndarray  # (nb, d)
    offset: int  # dense index = lattice + offset
    _interior_id: np.ndarray = field(repr=False)  # dense array, -1 if not interior
    _boundary_id: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.lattice)

    @property
    def points(self) -> np.ndarray:
        return self.lattice * self.h

    @property
    def boundary_points(self) -> np.ndarray:
        return self.boundary_lattice * self.h

    @property
    def dense_shape(self) -> tuple:
        return self._interior_id.shape

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def radii(self) -> np.ndarray:
        p = self.points
        return np.sqrt(np.einsum("ij,ij->i", p, p))

    def lookup(self, lattice: np.ndarray):
        """Map integer indices to ``(interior_id, boundary_id)``; -1 marks absence."""
        idx = np.asarray(lattice) + self.offset
        inside = np.all((idx >= 0) & (idx < np.array(self.dense_shape)), axis=-1)
        safe = np.where(inside[..., None], idx, 0)
        t = tuple(np.moveaxis(safe, -1, 0))
        ii = np.where(inside, self._interior_id[t], -1)
        bi = np.where(inside, self._boundary_id[t], -1)
        return ii, bi

    def to_dense(self, values, boundary_values=None, fill: float = 0.0) -> np.ndarray:
        """Scatter interior (and optional boundary) values onto the dense box."""
        out = np.full(self.dense_shape, float(fill))
        out[tuple((self.lattice + self.offset).T)] = values
        if boundary_values is not None:
            out[tuple((self.boundary_lattice + self.offset).T)] = boundary_values
        return out

    @property
    def dense_origin(self) -> np.ndarray:
        """Coordinates of dense index ``(0, ..., 0)``."""
        return -self.offset * self.h

    def contains(self, points) -> np.ndarray:
        return _inside(self.shape, np.atleast_2d(points), self.radius, self.inner_radius,
                       self.half_widths)

    def axis_counts(self) -> list:
        return [len(np.unique(self.lattice[:, i])) for i in range(self.d)]

    def describe(self) -> dict:
        return {
            "d": self.d,
            "shape": self.shape,
            "h": [float(v) for v in self.h],
            "radius": self.radius,
            "inner_radius": self.inner_radius,
            "interior_nodes": self.n,
            "boundary_nodes": len(self.boundary_lattice),
        }


def _inside(shape, pts, radius, inner, half_widths):
    if shape == "box":
        return np.all(np.abs(pts) < half_widths * (1 - _EDGE_TOL), axis=1)
    r = np.sqrt(np.einsum("ij,ij->i", pts, pts))
    ok = r < radius * (1 - _EDGE_TOL)
    if shape == "annulus":
        ok &= r > inner * (1 + _EDGE_TOL)
    return ok


def make_grid(d: int, shape: str, h, radius: float, inner_radius: float = 0.0,
              half_widths=None, min_axis_nodes: int = 3) -> Grid:
    """Build a masked lattice.

    Parameters
    ----------
    d : int
        Dimension.
    shape : {"interval", "box", "ball", "annulus"}
        ``interval`` is the one-dimensional ball.
    h : float or sequence
        Spacing, scalar or per axis.
    radius : float
        Outer radius; for ``box`` the common half-width unless
        ``half_widths`` is given.
    inner_radius : float
        Hole radius for ``annulus``.
    """
    if shape not in SHAPES:
        raise GridError(f"unknown domain shape {shape!r}; expected one of {SHAPES}")
    if shape == "interval" and d != 1:
        raise GridError("interval domains are one-dimensional")
    hv = np.broadcast_to(np.asarray(h, dtype=float), (d,)).copy()
    if np.any(hv <= 0):
        raise GridError("grid spacing must be positive")
    if radius <= 0:
        raise GridError("radius must be positive")
    if shape == "annulus" and not 0 < inner_radius < radius:
        raise GridError("annulus needs 0 < inner_radius < radius")
    hw = (np.broadcast_to(np.asarray(half_widths, dtype=float), (d,)).copy()
          if half_widths is not None else np.full(d, float(radius)))
    extent = hw if shape == "box" else np.full(d, float(radius))
    nmax = np.ceil(extent / hv).astype(int)
    N = int(nmax.max()) + 1
    size = 2 * N + 1
    axes = [np.arange(-N, N + 1)] * d
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    inside = _inside(shape, mesh * hv, radius, inner_radius, hw)
    interior_id = np.full((size,) * d, -1, dtype=np.int64)
    interior_lat = mesh[inside]
    interior_id[tuple((interior_lat + N).T)] = np.arange(len(interior_lat))

    # boundary: non-interior nodes in the 3^d neighbourhood of the interior
    touched = np.zeros((size,) * d, dtype=bool)
    inner_mask = interior_id >= 0
    for off in itertools.product((-1, 0, 1), repeat=d):
        if not any(off):
            continue
        src = tuple(slice(max(0, -o), size - max(0, o)) for o in off)
        dst = tuple(slice(max(0, o), size - max(0, -o)) for o in off)
        touched[dst] |= inner_mask[src]
    bmask = touched & ~inner_mask
    boundary_id = np.full((size,) * d, -1, dtype=np.int64)
    blat = np.argwhere(bmask) - N
    boundary_id[tuple((blat + N).T)] = np.arange(len(blat))

    grid = Grid(d, shape, hv, float(radius), float(inner_radius), hw, interior_lat,
                blat, N, interior_id, boundary_id)
    counts = grid.axis_counts() if grid.n else [0] * d
    if min(counts) < min_axis_nodes:
        raise GridError(
            f"grid too coarse: {min(counts)} interior nodes along some axis "
            f"(need {min_axis_nodes}); reduce h"
        )
    return grid
