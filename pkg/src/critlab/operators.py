"""Second-order operators ``L + V`` with ``L f = a^{ij} d_ij f + b^i d_i f``."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from .fields import Field, as_field

__all__ = [
    "OperatorSpec",
    "DispersionField",
    "ValidationReport",
    "validate_assumptions",
    "CoefficientError",
]

SYMMETRY_TOL = 1e-12


class CoefficientError(ValueError):
    """A coefficient produced a non-finite value; ``point`` is where."""

    def __init__(self, message: str, point=None):
        self.point = None if point is None else tuple(float(v) for v in point)
        super().__init__(message if point is None else f"{message} at x={self.point}")


@dataclass(frozen=True)
class OperatorSpec:
    d: int
    a: tuple  # d x d tuple of Fields, used symmetrically
    b: tuple  # d Fields
    V: Field
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if len(self.a) != self.d or any(len(row) != self.d for row in self.a):
            raise ValueError("diffusion must be a d x d array of fields")
        if len(self.b) != self.d:
            raise ValueError("drift must have d components")

    @classmethod
    def build(cls, d: int, a=None, b=None, V=0.0, **metadata) -> "OperatorSpec":
        """Build from strings, numbers or fields; ``a`` defaults to the identity.

        ``a`` may be a scalar (times identity), a length-d diagonal or a d x d
        nested sequence.
        """
        if a is None:
            a = 1.0
        if isinstance(a, (str, int, float, Field)):
            a = [[a if i == j else 0.0 for j in range(d)] for i in range(d)]
        elif len(a) == d and not isinstance(a[0], (list, tuple)):
            a = [[a[i] if i == j else 0.0 for j in range(d)] for i in range(d)]
        a_f = tuple(tuple(as_field(a[i][j], d) for j in range(d)) for i in range(d))
        if b is None:
            b = [0.0] * d
        b_f = tuple(as_field(v, d) for v in b)
        return cls(d, a_f, b_f, as_field(V, d), dict(metadata))

    def with_potential(self, V) -> "OperatorSpec":
        return replace(self, V=as_field(V, self.d))

    def add_potential(self, W, scale: float = 1.0) -> "OperatorSpec":
        return replace(self, V=self.V + scale * as_field(W, self.d))

    # vectorized coefficient evaluation -------------------------------------

    def diffusion(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((pts.shape[0], self.d, self.d))
        for i in range(self.d):
            for j in range(self.d):
                out[:, i, j] = self.a[i][j].evaluate(pts)
        return out

    def drift(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([f.evaluate(pts) for f in self.b], axis=1)

    def potential(self, points) -> np.ndarray:
        return self.V.evaluate(points)

    @property
    def constant_diffusion(self):
        vals = [[f.constant_value for f in row] for row in self.a]
        if any(v is None for row in vals for v in row):
            return None
        return np.array(vals, dtype=float)

    def describe(self) -> dict:
        return {
            "d": self.d,
            "a": [[f.describe() for f in row] for row in self.a],
            "b": [f.describe() for f in self.b],
            "V": self.V.describe(),
            **{k: v for k, v in self.metadata.items() if isinstance(v, (str, int, float))},
        }


def _sym_sqrt(a: np.ndarray) -> np.ndarray:
    sym = 0.5 * (a + np.swapaxes(a, -1, -2))
    w, q = np.linalg.eigh(sym)
    if np.any(w < 0):
        raise CoefficientError("diffusion matrix is not positive semidefinite")
    return np.einsum("...ij,...j,...kj->...ik", q, np.sqrt(w), q)


@dataclass(frozen=True)
class DispersionField:
    """``sigma = sqrt(2) a^{1/2}`` via the symmetric eigendecomposition."""

    spec: OperatorSpec

    def __call__(self, points) -> np.ndarray:
        a = self.spec.diffusion(points)
        scale = np.maximum(1.0, np.abs(a).max(axis=(1, 2)))
        asym = np.abs(a - np.swapaxes(a, 1, 2)).max(axis=(1, 2)) / scale
        if np.any(asym > SYMMETRY_TOL):
            k = int(np.argmax(asym))
            raise CoefficientError("diffusion matrix not symmetric", np.atleast_2d(points)[k])
        return np.sqrt(2.0) * _sym_sqrt(a)


@dataclass
class ValidationReport:
    passed: dict
    ellipticity: float
    growth_ratio: float
    lipschitz: float
    violations: dict
    V_unbounded: bool
    samples: int

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {
            "passed": dict(self.passed),
            "ok": self.ok,
            "ellipticity": self.ellipticity,
            "growth_ratio": self.growth_ratio,
            "lipschitz": self.lipschitz,
            "V_unbounded": self.V_unbounded,
            "violations": {k: [list(map(float, p)) for p in v] for k, v in self.violations.items()},
            "samples": self.samples,
        }


def _sample_region(d, half_width, inner_radius, samples, rng):
    pts = []
    need = samples
    while need > 0:
        cand = rng.uniform(-half_width, half_width, size=(max(need * 2, 16), d))
        cand = cand[np.linalg.norm(cand, axis=1) >= inner_radius]
        pts.append(cand[:need])
        need -= len(pts[-1])
    out = np.concatenate(pts)
    if inner_radius == 0:
        out[0] = 0.0  # always probe the origin when it is in the region
    return out


def validate_assumptions(
    spec: OperatorSpec,
    half_width: float,
    samples: int = 512,
    inner_radius: float = 0.0,
    seed: int = 0,
    max_listed: int = 10,
) -> ValidationReport:
    """Sample-check symmetry, ellipticity, affine growth and local Lipschitz bounds.

    Points are drawn uniformly from the box ``[-half_width, half_width]^d``
    minus the ball of radius ``inner_radius`` (the origin itself is included
    when ``inner_radius == 0``).  Non-finite drift or diffusion values raise
    :class:`CoefficientError`; an infinite potential only raises the
    ``V_unbounded`` flag.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    pts = _sample_region(spec.d, half_width, inner_radius, samples, rng)
    with np.errstate(all="ignore"):
        a = spec.diffusion(pts)
        b = spec.drift(pts)
        V = spec.potential(pts)
    for name, arr in (("diffusion", a), ("drift", b)):
        bad = ~np.isfinite(arr.reshape(len(pts), -1)).all(axis=1)
        if bad.any():
            raise CoefficientError(f"non-finite {name} value", pts[np.argmax(bad)])
    if np.isnan(V).any():
        raise CoefficientError("potential undefined", pts[np.argmax(np.isnan(V))])
    V_unbounded = bool(np.isinf(V).any())

    scale = np.maximum(1.0, np.abs(a).max(axis=(1, 2)))
    asym = np.abs(a - np.swapaxes(a, 1, 2)).max(axis=(1, 2)) / scale
    sym_ok = asym <= SYMMETRY_TOL
    eig_min = np.linalg.eigvalsh(0.5 * (a + np.swapaxes(a, 1, 2)))[:, 0]
    pd_ok = eig_min > 0
    norm_a = np.sqrt(np.einsum("nij,nij->n", a, a))
    bx = np.einsum("ni,ni->n", b, pts)
    growth = (np.maximum(bx, 0.0) + norm_a) / (1.0 + np.einsum("ni,ni->n", pts, pts))

    # Lipschitz estimate of a over nearest sample pairs
    lip = 0.0
    if len(pts) > 1:
        from scipy.spatial import cKDTree

        dist, idx = cKDTree(pts).query(pts, k=2)
        dx = dist[:, 1]
        da = np.sqrt(np.einsum("nij,nij->n", a - a[idx[:, 1]], a - a[idx[:, 1]]))
        ok = dx > 0
        if ok.any():
            lip = float((da[ok] / dx[ok]).max())

    violations = {}
    if not sym_ok.all():
        violations["symmetry"] = pts[~sym_ok][:max_listed]
    if not pd_ok.all():
        violations["positive_definite"] = pts[~pd_ok][:max_listed]
    passed = {
        "symmetry": bool(sym_ok.all()),
        "positive_definite": bool(pd_ok.all()),
        "affine_growth": bool(np.isfinite(growth).all()),
        "lipschitz": bool(np.isfinite(lip)),
        "potential_locally_bounded": not V_unbounded,
    }
    return ValidationReport(
        passed=passed,
        ellipticity=float(eig_min.min()),
        growth_ratio=float(growth.max()),
        lipschitz=lip,
        violations=violations,
        V_unbounded=V_unbounded,
        samples=len(pts),
    )
