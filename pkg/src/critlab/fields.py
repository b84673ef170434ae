"""Scalar fields used as coefficients and potentials.

Every field evaluates vectorized on ``(n, d)`` point arrays.  Fields built
from expressions, ball indicators and linear combinations of those also
compile to kernel programs so the path simulators can evaluate them without
calling back into Python.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .expr import (
    OP_ADD,
    OP_MUL,
    ProgramBuilder,
    ScalarExpression,
    parse_coefficient_expression,
)

__all__ = [
    "Field",
    "ExprField",
    "BallIndicator",
    "Combination",
    "as_field",
    "constant",
    "bump",
    "plateau",
    "cell_fraction",
]


class Field:
    d: int

    def evaluate(self, points) -> np.ndarray:
        raise NotImplementedError

    def grid_values(self, points: np.ndarray, spacing) -> np.ndarray:
        """Values used by lattice discretizations at ``points``."""
        return self.evaluate(points)

    def emit(self, builder: ProgramBuilder) -> None:
        raise TypeError(f"{type(self).__name__} cannot be compiled")

    @property
    def constant_value(self) -> float | None:
        return None

    def describe(self) -> str:
        raise NotImplementedError

    def __add__(self, other):
        return Combination.of([(1.0, self), (1.0, as_field(other, self.d))])

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return Combination.of([(1.0, self), (-1.0, as_field(other, self.d))])

    def __mul__(self, c):
        return Combination.of([(float(c), self)])

    __rmul__ = __mul__

    def __neg__(self):
        return Combination.of([(-1.0, self)])

    def __repr__(self):
        return f"<{type(self).__name__} {self.describe()}>"


class ExprField(Field):
    def __init__(self, expression: ScalarExpression):
        self.expression = expression
        self.d = expression.d

    @classmethod
    def parse(cls, text: str, d: int) -> "ExprField":
        return cls(parse_coefficient_expression(text, d))

    def evaluate(self, points):
        return self.expression.evaluate(points)

    def emit(self, builder):
        builder.node(self.expression.node)

    @property
    def constant_value(self):
        if not self.expression.is_constant:
            return None
        return float(self.expression.evaluate(np.zeros((1, self.d)))[0])

    def describe(self):
        return self.expression.pretty()


def cell_fraction(points: np.ndarray, spacing, center, radius: float, sub: int = 8) -> np.ndarray:
    """Fraction of each lattice cell (centred on ``points``) inside a ball.

    Midpoint subsampling with ``sub`` points per axis; exact for cells wholly
    inside or outside.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = pts.shape
    h = np.broadcast_to(np.asarray(spacing, dtype=float), (d,))
    c = np.asarray(center, dtype=float)
    diff = pts - c
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    half_diag = 0.5 * float(np.linalg.norm(h))
    out = (dist <= radius).astype(float)
    mixed = np.abs(dist - radius) <= half_diag
    if mixed.any():
        offs1 = (np.arange(sub) + 0.5) / sub - 0.5
        offs = np.array(list(itertools.product(offs1, repeat=d))) * h
        sub_pts = diff[mixed][:, None, :] + offs[None, :, :]
        inside = np.einsum("ijk,ijk->ij", sub_pts, sub_pts) <= radius * radius
        out[mixed] = inside.mean(axis=1)
    return out


class BallIndicator(Field):
    """The indicator of the closed ball ``|x - center| <= radius``.

    On lattices it is represented by the cell-overlap fraction, which keeps
    discontinuities at second order in the grid spacing.
    """

    def __init__(self, center, radius: float):
        self.center = tuple(float(c) for c in np.atleast_1d(center))
        self.radius = float(radius)
        self.d = len(self.center)
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    def evaluate(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        diff = pts - np.asarray(self.center)
        return (np.einsum("ij,ij->i", diff, diff) <= self.radius**2).astype(float)

    def grid_values(self, points, spacing):
        return cell_fraction(points, spacing, self.center, self.radius)

    def emit(self, builder):
        builder.ball(self.center, self.radius)

    def describe(self):
        c = ", ".join(f"{v:g}" for v in self.center)
        return f"1_B(({c}), {self.radius:g})"


class Combination(Field):
    """Finite linear combination ``sum_k c_k f_k``."""

    def __init__(self, terms):
        self.terms = tuple((float(c), f) for c, f in terms)
        dims = {f.d for _, f in self.terms}
        if len(dims) != 1:
            raise ValueError("cannot combine fields of different dimension")
        (self.d,) = dims

    @classmethod
    def of(cls, terms):
        flat = []
        for c, f in terms:
            if isinstance(f, Combination):
                flat += [(c * ci, fi) for ci, fi in f.terms]
            else:
                flat.append((c, f))
        return cls(flat)

    def evaluate(self, points):
        out = None
        for c, f in self.terms:
            v = c * f.evaluate(points)
            out = v if out is None else out + v
        return out

    def grid_values(self, points, spacing):
        out = None
        for c, f in self.terms:
            v = c * f.grid_values(points, spacing)
            out = v if out is None else out + v
        return out

    def emit(self, builder):
        for k, (c, f) in enumerate(self.terms):
            f.emit(builder)
            if c != 1.0:
                builder.const(c)
                builder.emit(OP_MUL, pops=1)
            if k:
                builder.emit(OP_ADD, pops=1)

    @property
    def constant_value(self):
        vals = [f.constant_value for _, f in self.terms]
        if any(v is None for v in vals):
            return None
        return math.fsum(c * v for (c, _), v in zip(self.terms, vals))

    def describe(self):
        parts = []
        for c, f in self.terms:
            parts.append(f.describe() if c == 1.0 else f"{c:g}*({f.describe()})")
        return " + ".join(parts)


def constant(value: float, d: int) -> ExprField:
    return ExprField.parse(repr(float(value)), d)


def as_field(obj, d: int) -> Field:
    if isinstance(obj, Field):
        if obj.d != d:
            raise ValueError(f"field has dimension {obj.d}, expected {d}")
        return obj
    if isinstance(obj, str):
        return ExprField.parse(obj, d)
    if isinstance(obj, (int, float)):
        return constant(obj, d)
    raise TypeError(f"cannot interpret {obj!r} as a field")


def bump(center, radius: float, height: float = 1.0) -> ExprField:
    """C^1 compactly supported bump ``height * max(0, 1 - |x-c|^2/rho^2)^2``."""
    c = [float(v) for v in np.atleast_1d(center)]
    d = len(c)
    sq = " + ".join(
        f"(x{i + 1} - {ci!r})^2" if ci else f"x{i + 1}^2" for i, ci in enumerate(c)
    )
    text = f"{float(height)!r}*max(0, 1 - ({sq})/{float(radius) ** 2!r})^2"
    return ExprField.parse(text, d)


def plateau(center, radius: float = 1.0, width: float = 0.5, height: float = 1.0) -> ExprField:
    """Mollified indicator: ``height`` on ``B_radius``, C^1 smoothstep to 0 at ``radius + width``."""
    c = [float(v) for v in np.atleast_1d(center)]
    d = len(c)
    if all(ci == 0.0 for ci in c):
        dist = "r"
    else:
        sq = " + ".join(f"(x{i + 1} - {ci!r})^2" for i, ci in enumerate(c))
        dist = f"sqrt({sq})"
    t = f"max(0, min(1, ({float(radius + width)!r} - {dist})/{float(width)!r}))"
    return ExprField.parse(f"{float(height)!r}*{t}^2*(3 - 2*{t})", d)


def compile_field(field: Field):
    builder = ProgramBuilder()
    field.emit(builder)
    return builder.finish()
