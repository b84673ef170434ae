"""Command-line front end: ``critlab run <command> <config> [flags]``.

Exit status is 0 on success, 2 when a run completes but a hypothesis or
verdict fails, and 1 on errors (bad config, solver failure).
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import criticality as crit
from . import decay, landis, montecarlo as mc
from .config import Config, ConfigError, load_config
from .discretize import build_discrete_operator
from .eigen import DomainPolicy, principal_eigenpair
from .fields import BallIndicator, as_field
from .reporting import RunManifest, csv_text, default_output_dir, emit_plotdata, write_json

COMMANDS = ("eig", "lambda-star", "monotone", "calibrate-delta", "calibrate-beta", "compare",
            "mc-verify", "twist", "decay-cert", "khasminskii", "landis", "poincare", "suite")

# flag name -> dotted config key
FLAG_KEYS = {
    "radius": "domain.radius",
    "h": "domain.h",
    "paths": "mc.paths",
    "dt": "mc.dt",
    "t_max": "mc.t_max",
    "seed": "run.seed",
    "workers": "mc.workers",
}


class Outcome:
    """Result of one command: report, CSV artifacts and whether hypotheses held."""

    def __init__(self, report: dict, ok: bool = True, tables: dict | None = None):
        self.report = report
        self.ok = ok
        self.tables = tables or {}


# ------------------------------------------------------------------ helpers


def _solver(cfg: Config, sc) -> crit.SolverConfig:
    R = sc.radius
    radii = cfg.get_floats("solver", "radii", [R / 4, R / 2, R])
    h = cfg.get_float("solver", "h", sc.h)
    inner = cfg.get_float("solver", "inner_radius", sc.resolved_inner_radius(max(radii)))
    policy = DomainPolicy(cfg.get_str("solver", "shape", sc.shape), h, inner)
    return crit.SolverConfig(tuple(radii), policy, cfg.get_float("solver", "tol", 1e-10),
                             cfg.get_int("solver", "max_iter", 200))


def _sim(cfg: Config) -> mc.SimConfig:
    return mc.SimConfig(
        dt=cfg.get_float("mc", "dt", 1e-2),
        t_max=cfg.get_float("mc", "t_max", 100.0),
        r_max=cfg.get_float("mc", "r_max", math.inf),
        paths=cfg.get_int("mc", "paths", 1000),
        seed=cfg.get_int("run", "seed", 0),
        workers=cfg.get_int("mc", "workers", 1),
        bridge=cfg.get_bool("mc", "bridge", True),
        weight_floor=cfg.get_float("mc", "weight_floor", None),
    )


def _bump(cfg: Config, sc, section: str, key: str = "bump", default: str | None = None):
    name = cfg.get_str(section, key, default)
    if name is None:
        if sc.bumps:
            return next(iter(sc.bumps.values())), next(iter(sc.bumps))
        raise ConfigError(f"[{section}] {key} is required for scenario {sc.name}")
    if name in sc.bumps:
        return sc.bumps[name], name
    return cfg.get_field(section, key, sc.d), name


# ----------------------------------------------------------------- commands


def cmd_eig(cfg, sc):
    R = sc.radius
    grid = DomainPolicy(sc.shape, sc.h, sc.resolved_inner_radius(R)).grid(sc.d, R)
    pair = principal_eigenpair(build_discrete_operator(sc.spec, grid),
                               tol=cfg.get_float("solver", "tol", 1e-10))
    rep = {"scenario": sc.name, "R": R, "h": sc.h, "nodes": grid.n, "lambda": pair.lam,
           "residual": pair.residual, "bracket": list(pair.bracket),
           "iterations": pair.iterations}
    tables = {}
    if cfg.get_bool("output", "dump_psi", False):
        tables["psi.csv"] = pair.dump_csv()
    return Outcome(rep, True, tables)


def cmd_lambda_star(cfg, sc):
    solver = _solver(cfg, sc)
    curve = solver.curve(sc.spec)
    curve.curve_tol = cfg.get_float("solver", "curve_tol", 1e-3)
    rep = curve.to_dict()
    rep["scenario"] = sc.name
    ref = sc.ref("lambda_star")
    if isinstance(ref, (int, float)):
        lo, hi = curve.bracket
        rep["reference"] = ref
        rep["reference_in_bracket"] = bool(lo - 1e-12 <= ref <= hi + 1e-12)
    return Outcome(rep, True, {"curve.csv": curve.to_csv(),
                               "eigen-curve.csv": emit_plotdata(rep, "eigen-curve")})


def cmd_monotone(cfg, sc):
    solver = _solver(cfg, sc)
    bump, name = _bump(cfg, sc, "monotone")
    eps = cfg.get_floats("monotone", "epsilons", [1.0, 2.0, 4.0])
    rep = crit.right_monotonicity_test(sc.spec, bump, eps, solver,
                                       cfg.get_bool("monotone", "both_sided", True))
    out = rep.to_dict()
    out["scenario"] = sc.name
    if cfg.get_bool("monotone", "threshold", False):
        out["coupling_threshold"] = crit.coupling_threshold(sc.spec, bump, solver)
    rows = [(r["epsilon"], r["lambda_plus"], r["diff_plus"], r["margin_plus"]) for r in out["ladder"]]
    return Outcome(out, rep.invariant_ok, {
        "ladder.csv": csv_text(("epsilon", "lambda_plus", "diff_plus", "margin_plus"), rows)})


def cmd_calibrate_delta(cfg, sc):
    solver = _solver(cfg, sc)
    rad = cfg.get_float("calibrate", "ball_radius", 1.0)
    center = cfg.get_floats("calibrate", "center", [0.0] * sc.d)

    ball = BallIndicator(tuple(center), rad)
    target = cfg.get_float("calibrate", "target")
    res = crit.calibrate_delta(sc.spec, ball, target, solver, cfg.get_float("calibrate", "tol", 1e-8))
    return Outcome({"scenario": sc.name, **res.to_dict()}, True,
                   {"evaluations.csv": csv_text(("delta", "lambda"), res.ladder)})


def cmd_calibrate_beta(cfg, sc):
    solver = _solver(cfg, sc)
    b1, n1 = _bump(cfg, sc, "calibrate", "bump1", "bump1" if "bump1" in sc.bumps else None)
    b2, n2 = _bump(cfg, sc, "calibrate", "bump2", "bump2" if "bump2" in sc.bumps else None)
    beta1 = cfg.get_float("calibrate", "beta1", 1.0)
    res = crit.calibrate_beta(sc.spec, sc.spec, b1, b2, beta1, solver,
                              cfg.get_float("calibrate", "tol", 1e-8))
    rep = {"scenario": sc.name, "bump1": n1, "bump2": n2, "beta1": beta1, **res.to_dict(),
           "ratio": res.value / beta1 if beta1 else None}
    return Outcome(rep, True, {"evaluations.csv": csv_text(("beta2", "lambda"), res.ladder)})


def cmd_compare(cfg, sc):
    solver = _solver(cfg, sc)
    spec2 = sc.spec.with_potential(cfg.get_field("compare", "V2", sc.d))
    cand = cfg.get_field("compare", "candidate", sc.d)
    sup = cfg.get_str("compare", "supersolution", None)
    gs = [cfg.get_str("compare", f"ground_state{k}", None) for k in (1, 2)]
    mode = cfg.get_str("compare", "mode", "ordered")
    rep = crit.liouville_compare(
        sc.spec, spec2, cand, solver, mode=mode,
        compact_radius=cfg.get_float("compare", "compact_radius", None),
        supersolution=None if sup is None else as_field(sup, sc.d),
        ground_state1=None if gs[0] is None else as_field(gs[0], sc.d),
        ground_state2=None if gs[1] is None else as_field(gs[1], sc.d),
        region=cfg.get_float("compare", "region", 0.5))
    return Outcome({"scenario": sc.name, "verdict": rep.conclusions["verdict"], **rep.to_dict()},
                   rep.hypotheses_hold)


def _psi_for(cfg, sc):
    text = cfg.get_str("mc", "psi", None)
    if text is None:
        text = sc.ref("ground_state", "1")
    return as_field(text, sc.d)


def cmd_mc_verify(cfg, sc):
    sim = _sim(cfg)
    r = cfg.get_float("mc", "r", 1.0)
    x0s = cfg.get_points("mc", "x0", [[2.0 * r] + [0.0] * (sc.d - 1)])
    lam = cfg.get_float("mc", "lambda", 0.0)
    psi = _psi_for(cfg, sc)
    bound = cfg.get_float("mc", "return_bound", None)
    if bound is None and math.isfinite(sim.r_max):
        expr = sc.ref("return_bound")
        if isinstance(expr, str):
            bound = _eval_bound(expr, r, sim.r_max)
    rep = mc.verify_representation(sc.spec, psi, lam, r, x0s, sim, return_bound=bound,
                                   censor_cap=cfg.get_float("mc", "censor_cap", 0.2))
    rep["scenario"] = sc.name
    rows = [(tuple(row["x0"]).__repr__(), row["estimate"], row["stderr"], row["censored_fraction"])
            for row in rep["rows"]]
    ok = rep["verdict"] not in ("inconclusive", "inconsistent")
    return Outcome(rep, ok, {"estimates.csv": csv_text(("x0", "estimate", "SE", "censored_frac"),
                                                       rows)})


def _eval_bound(expr: str, r: float, R: float) -> float:
    """Evaluate a return bound written in terms of ``r`` and ``R``."""
    import ast
    import operator

    ops = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow, ast.USub: operator.neg}

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in ("r", "R"):
            return r if node.id == "r" else R
        if isinstance(node, ast.BinOp) and type(node.op) in ops:
            return ops[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in ops:
            return ops[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported return bound {expr!r}")

    return float(ev(ast.parse(expr.replace("^", "**"), mode="eval")))


def cmd_twist(cfg, sc):
    sim = _sim(cfg)
    r = cfg.get_float("mc", "r", 1.0)
    x0 = cfg.get_floats("twist", "x0", [1.1 * r] + [0.0] * (sc.d - 1))
    source = cfg.get_str("twist", "drift", "analytic" if sc.twisted_drift else "none")
    if source == "analytic":
        if not sc.twisted_drift:
            raise ConfigError(f"scenario {sc.name} has no analytic twisted drift")
        drift = mc.TwistedDrift.from_expressions(sc.twisted_drift, sc.d)
    elif source == "grid":
        solver = _solver(cfg, sc)
        grid = solver.grid(sc.d)
        pair = principal_eigenpair(build_discrete_operator(sc.spec, grid), tol=solver.tol)
        drift = mc.TwistedDrift.from_grid(grid, pair.psi)
    elif source == "none":
        drift = mc.TwistedDrift.trivial(sc.d)
    else:
        raise ConfigError(f"[twist] drift must be analytic, grid or none, got {source!r}")
    ladder = cfg.get_floats("twist", "T_ladder",
                            [sim.t_max / 1000, sim.t_max / 100, sim.t_max / 10, sim.t_max])
    rep = mc.twisted_simulate(drift, sc.spec, x0, r, sim, ladder,
                              box_cap=cfg.get_float("twist", "box_cap", 0.05))
    rep["scenario"] = sc.name
    return Outcome(rep, rep["verdict"] != "inconclusive",
                   {"hitting-curve.csv": emit_plotdata(rep, "hitting-curve")})


def cmd_decay_cert(cfg, sc):
    sec = "decay"
    cert = decay.make_certificate(cfg.get_float(sec, "M", 0.0), cfg.get_float(sec, "eta0", 1.0),
                                  cfg.get_float(sec, "beta", 0.0), cfg.get_float(sec, "gamma", 1.0),
                                  cfg.get_float(sec, "alpha", 1.0), cfg.get_float(sec, "eps_K", 0.1))
    K = cfg.get_float(sec, "K", None)
    if K is not None:
        cert = cert.with_K(K)
    cert = decay.verify_lyapunov(sc.spec, cert, cfg.get_float(sec, "r_start", 1.0),
                                 cfg.get_float(sec, "r_stop", 64.0),
                                 samples=cfg.get_int(sec, "samples", 64),
                                 seed=cfg.get_int("run", "seed", 0))
    rep = {"scenario": sc.name, "certificate": cert.to_dict()}
    tables = {}
    if cert.status != "verified":
        return Outcome(rep, False)
    u_text = cfg.get_str(sec, "u", None) or sc.ref("solution")
    if u_text is None:
        return Outcome(rep, True)
    r = max(cfg.get_float(sec, "r", cert.r0), cert.r0)
    h = cfg.get_float(sec, "h", 1.0)
    hw = cfg.get_float(sec, "half_width", 48.0)
    check = decay.lower_bound_check(u_text, cert, r, half_width=hw, h=h, d=sc.d)
    u = as_field(u_text, sc.d)
    radii = np.linspace(r, hw, 25)
    e1 = np.zeros((len(radii), sc.d))
    e1[:, 0] = radii
    u0 = float(u.evaluate(np.zeros((1, sc.d)) if check.x0 is None else np.array([check.x0]))[0])
    uvals = u.evaluate(e1) / u0
    rep["bound_check"] = check.to_dict()
    rep["envelope"] = [{"radius": float(a), "u": float(b), "bound": float(check.C * cert.barrier(a))}
                       for a, b in zip(radii, uvals)]
    tables["decay-envelope.csv"] = emit_plotdata(rep, "decay-envelope")
    if check.violations:
        tables["violations.csv"] = check.violations_csv()
    return Outcome(rep, check.passed, tables)


def cmd_khasminskii(cfg, sc):
    sec = "khasminskii"
    if cfg.has(sec, "V_plus"):
        V = cfg.get_field(sec, "V_plus", sc.d)
    else:
        # c times the indicator of a centred ball
        V = cfg.get_float(sec, "c") * BallIndicator((0.0,) * sc.d,
                                                     cfg.get_float(sec, "ball_radius", 1.0))
    rep = decay.khasminskii_check(V, sc.d, cfg.get_float(sec, "half_width", 1.5),
                                  safety_margin=cfg.get_float(sec, "margin", 0.0),
                                  levels=cfg.get_floats(sec, "levels", [0.2, 0.1, 0.05]))
    rep["scenario"] = sc.name
    return Outcome(rep, rep["verdict"] == "pass")


def cmd_landis(cfg, sc):
    sec = "landis"
    d = sc.d
    prof = landis.radon_profile(cfg.get_field(sec, "u", d), d, cfg.get_int(sec, "axis", 1) - 1,
                                tuple(cfg.get_floats(sec, "s_range", [0.0, 4.0])),
                                cfg.get_float(sec, "half_width", 6.0), cfg.get_float(sec, "h", 0.1))
    M = cfg.get_float(sec, "M", 0.0)
    gamma = cfg.get_float(sec, "gamma", 1.0)
    ode = None
    if cfg.has(sec, "b01") or cfg.has(sec, "k"):
        ode = landis.ode_residual_and_roots(prof, cfg.get_float(sec, "b01", 0.0),
                                            cfg.get_float(sec, "k", 0.0), M, gamma)
    k_obs = cfg.get_float(sec, "kappa_obs", None)
    if k_obs is None:
        k_obs = landis.fit_decay_exponent(prof)
    if k_obs is None:
        rep = {"verdict": "u≡0 implied", "reasons": ["the profile vanishes identically"]}
    else:
        rep = landis.landis_decide(k_obs, M, gamma, ode, cfg.get_float(sec, "eps", 1e-2))
    rep.update({"scenario": sc.name, "s": prof.s.tolist(), "w": prof.w.tolist(),
                "ode": None if ode is None else ode.to_dict()})
    tables = {"radon-profile.csv": emit_plotdata(rep, "radon-profile")}
    if ode is not None:
        tables["profile.csv"] = prof.to_csv(ode.b01, ode.k)
    return Outcome(rep, rep["verdict"] == "u≡0 implied", tables)


def cmd_poincare(cfg, sc):
    sec = "poincare"
    rep = landis.reverse_poincare_check(
        cfg.get_field(sec, "u", sc.d), sc.d, cfg.get_float(sec, "r", 1.0),
        cfg.get_float(sec, "C", 1.0), cfg.get_points(sec, "centers", None),
        cfg.get_float(sec, "h", 0.05), cfg.get_float(sec, "M", 0.0), cfg.get_float(sec, "q2", 0.0))
    rep["scenario"] = sc.name
    return Outcome(rep, rep["verdict"] in ("pass", "unique continuation: u≡0"))


HANDLERS = {
    "eig": cmd_eig, "lambda-star": cmd_lambda_star, "monotone": cmd_monotone,
    "calibrate-delta": cmd_calibrate_delta, "calibrate-beta": cmd_calibrate_beta,
    "compare": cmd_compare, "mc-verify": cmd_mc_verify, "twist": cmd_twist,
    "decay-cert": cmd_decay_cert, "khasminskii": cmd_khasminskii, "landis": cmd_landis,
    "poincare": cmd_poincare,
}


# -------------------------------------------------------------------- driver


def execute(command: str, cfg: Config, out_dir) -> tuple:
    """Run one command and write its artifacts; returns ``(exit_code, outcome)``."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}")
    sc = cfg.scenario()
    t0 = time.perf_counter()
    outcome = HANDLERS[command](cfg, sc)
    elapsed = time.perf_counter() - t0
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(command, cfg.source, cfg.text, cfg.overrides, cfg.resolved(), out,
                           cfg.get_int("run", "seed", 0))
    write_json(out / "report.json", outcome.report)
    manifest.outputs.append("report.json")
    for name, text in sorted(outcome.tables.items()):
        (out / name).write_text(text, encoding="utf-8")
        manifest.outputs.append(name)
    code = 0 if outcome.ok else 2
    manifest.status = {"exit_code": code, "elapsed_s": round(elapsed, 3)}
    manifest.write(out)
    return code, outcome


def _summary(command: str, outcome: Outcome) -> str:
    rep = outcome.report
    for key in ("verdict", "right_classification", "value", "lambda_star", "lambda", "sup",
                "hypotheses_hold"):
        if key in rep:
            return f"{command}: {key} = {rep[key]}"
    if "certificate" in rep:
        return f"{command}: certificate {rep['certificate']['status']}"
    return f"{command}: done"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="critlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="action", required=True)
    run = sub.add_parser("run", help="run a command on a config file")
    run.add_argument("command", choices=COMMANDS)
    run.add_argument("config", help="config file ('all' or criterion numbers for suite)",
                     nargs="?")
    run.add_argument("--out", help="output directory")
    run.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                     help="override a config value (repeatable)")
    for flag in FLAG_KEYS:
        run.add_argument("--" + flag.replace("_", "-"), dest=flag)
    run.add_argument("--quick", action="store_true", help="suite: reduced sizes")
    rp = sub.add_parser("replay", help="rerun from a manifest.json")
    rp.add_argument("manifest")
    rp.add_argument("--out", help="output directory (default: next to the manifest)")
    sub.add_parser("scenarios", help="list built-in scenarios")
    return p


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip()] = v.strip()
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            ov[key] = v
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.action == "scenarios":
            from .scenarios import scenario_library

            for s in scenario_library():
                print(f"{s.name:12s} d={s.d}  {s.description}")
            return 0
        if args.action == "replay":
            data = RunManifest.load(args.manifest)
            cfg = Config(data["config_text"], data.get("config_path"), data["overrides"])
            out = args.out or str(Path(args.manifest).parent / "replay")
            code, outcome = execute(data["command"], cfg, out)
            print(_summary(data["command"], outcome))
            return code
        if args.command == "suite":
            from .acceptance import run_suite

            which = args.config or "all"
            results = run_suite(which, quick=args.quick, out_dir=args.out)
            return 0 if all(r.passed for r in results) else 2
        if args.config is None:
            raise ConfigError("a config file is required")
        cfg = load_config(args.config, _overrides(args))
        out = args.out or str(Path(default_output_dir()) / f"{Path(args.config).stem}-{args.command}")
        code, outcome = execute(args.command, cfg, out)
        print(_summary(args.command, outcome))
        print(f"artifacts in {out}")
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # surfaced verbatim, distinguished from verdict failures
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
