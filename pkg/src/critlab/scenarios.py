"""Built-in scenarios with their closed-form reference data."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .fields import bump, plateau
from .operators import OperatorSpec, validate_assumptions

__all__ = ["Reference", "Scenario", "ScenarioNotFound", "scenario_library", "get_scenario"]


class ScenarioNotFound(KeyError):
    def __str__(self):
        return f"unknown scenario {self.args[0]!r}; available: {', '.join(_NAMES)}"


@dataclass(frozen=True)
class Reference:
    value: Any
    provenance: str  # "literature", "derived" or "trivial"
    note: str = ""


@dataclass(frozen=True)
class Scenario:
    """An operator together with its working domain and known answers.

    ``reference`` holds only analytically known quantities, for example
    ``lambda_star``, ``classification``, ``ground_state``, ``hitting_law``
    or ``return_bound`` (an upper bound for the probability of ever hitting
    ``B_r`` from the kill sphere, as an expression in ``r`` and ``R``).
    """

    name: str
    spec: OperatorSpec
    shape: str = "ball"
    radius: float = 8.0
    inner_radius: float | None = None
    h: float = 0.5
    reference: dict = field(default_factory=dict)
    bumps: dict = field(default_factory=dict)
    twisted_drift: tuple | None = None  # expressions for 2a grad log(ground state)
    recurrent: bool | None = None
    description: str = ""

    @property
    def d(self) -> int:
        return self.spec.d

    def resolved_inner_radius(self, R: float | None = None) -> float:
        """Annulus hole radius; the default is 5% of the working radius."""
        if self.shape != "annulus":
            return 0.0
        if self.inner_radius is not None:
            return float(self.inner_radius)
        return 0.05 * float(R if R is not None else self.radius)

    def working_box(self) -> tuple:
        """``(half_width, excluded_radius)`` used for assumption checks."""
        return self.radius, self.resolved_inner_radius()

    def validate(self, samples: int = 512, seed: int = 0):
        hw, inner = self.working_box()
        return validate_assumptions(self.spec, hw, samples, inner_radius=inner, seed=seed)

    def ref(self, key, default=None):
        r = self.reference.get(key)
        return default if r is None else r.value


def _laplace(d: int) -> Scenario:
    spec = OperatorSpec.build(d, preset=f"laplace-{d}d")
    recurrent = d <= 2
    ref = {
        "lambda_star": Reference(0.0, "literature", "Laplacian without potential"),
        "classification": Reference("critical" if recurrent else "subcritical", "literature",
                                    "critical iff d <= 2"),
        "ground_state": Reference("1", "trivial") if recurrent else None,
        "hitting_law": Reference("1" if recurrent else "r/|x|",
                                 "derived", "harmonic measure of B_r"),
    }
    if not recurrent:
        ref["return_bound"] = Reference("r/R", "derived", "hitting law on the kill sphere")
    if d == 1:
        ref["dirichlet_ball"] = Reference("-(pi/(2R))^2", "derived", "Dirichlet spectrum")
    return Scenario(f"laplace-{d}d", spec, "ball", {1: 4.0, 2: 8.0, 3: 8.0}[d],
                    h=0.5 if d > 1 else 0.05,
                    reference={k: v for k, v in ref.items() if v is not None},
                    bumps={"unit": plateau([0.0] * d), "small": bump([0.0] * d, 1.0, 1.0)},
                    recurrent=recurrent, description=f"Laplacian in dimension {d}")


def _build() -> dict:
    lib = {}
    for d in (1, 2, 3):
        s = _laplace(d)
        lib[s.name] = s
    lib["hardy-3d"] = Scenario(
        "hardy-3d",
        OperatorSpec.build(3, V="0.25/r^2", preset="hardy-3d"),
        "annulus",
        4.0,
        None,
        0.1,
        reference={
            "lambda_star": Reference(0.0, "literature", "Hardy weight (d-2)^2/(4|x|^2)"),
            "classification": Reference("critical", "literature"),
            "ground_state": Reference("r^(-0.5)", "literature", "|x|^((2-d)/2)"),
        },
        bumps={"unit": bump([1.5, 0.0, 0.0], 1.0, 1.0)},
        twisted_drift=("-x1/r^2", "-x2/r^2", "-x3/r^2"),
        recurrent=False,
        description="Laplacian plus the optimal Hardy potential on R^3 minus the origin",
    )
    lib["sinsin-2d"] = Scenario(
        "sinsin-2d",
        OperatorSpec.build(2, V=2.0, preset="sinsin-2d"),
        "ball",
        8.0,
        h=0.25,
        reference={
            "lambda_star": Reference(2.0, "literature", "shift of the planar Laplacian"),
            "solution": Reference("sin(x1)*sin(x2)", "literature", "bounded sign-changing solution"),
        },
        recurrent=True,
        description="Laplacian plus 2 in the plane",
    )
    lib["expdecay"] = Scenario(
        "expdecay",
        OperatorSpec.build(3, V="-1 + 2/r", preset="expdecay"),
        "annulus",
        12.0,
        3.0,
        0.25,
        reference={
            "solution": Reference("exp(-r)", "literature", "solution for |x| > d"),
            "kappa1": Reference(1.0, "literature", "critical exponential rate"),
        },
        recurrent=False,
        description="exterior problem with solution exp(-|x|)",
    )
    lib["ou-drift"] = Scenario(
        "ou-drift",
        OperatorSpec.build(2, b=["-x1", "-x2"], preset="ou-drift"),
        "ball",
        6.0,
        h=0.25,
        reference={
            "lambda_star": Reference(0.0, "derived", "positive recurrent, constants harmonic"),
            "classification": Reference("critical", "derived"),
            "ground_state": Reference("1", "trivial"),
        },
        recurrent=True,
        description="Ornstein-Uhlenbeck drift",
    )
    for d in (1, 2):
        base = lib[f"laplace-{d}d"]
        b1 = bump([0.0] * d, 1.0, 1.0)
        lib[f"bump-{d}d"] = Scenario(
            f"bump-{d}d",
            OperatorSpec.build(d, preset=f"bump-{d}d"),
            "ball",
            base.radius,
            h=base.h if d == 1 else 0.5,
            reference={
                "lambda_star": Reference(0.0, "literature"),
                "beta_ratio": Reference(0.5, "derived", "doubled bump halves the coupling"),
            },
            bumps={"bump1": b1, "bump2": 2.0 * b1},
            recurrent=True,
            description=f"recurrent base with compact bump potentials in dimension {d}",
        )
    return lib


_LIB = _build()
_NAMES = tuple(_LIB)


def scenario_library() -> list:
    return list(_LIB.values())


def get_scenario(name: str) -> Scenario:
    try:
        return _LIB[name]
    except KeyError:
        raise ScenarioNotFound(name) from None

