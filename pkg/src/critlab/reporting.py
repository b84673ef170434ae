"""Run manifests, JSON reports and plot-ready CSV files."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
from pathlib import Path

import numpy as np

__all__ = ["RunManifest", "to_jsonable", "write_json", "write_csv", "emit_plotdata",
           "PLOT_KINDS", "default_output_dir"]

PLOT_KINDS = {
    "eigen-curve": ("R", "lambda_R"),
    "decay-envelope": ("|x|", "u", "C*Lambda"),
    "hitting-curve": ("T", "P_hat", "wilson_lo", "wilson_hi"),
    "radon-profile": ("s", "w"),
}


def default_output_dir() -> str:
    return os.environ.get("CRITLAB_OUTPUT_DIR", "critlab-out")


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and tuples; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.write_text(csv_text(header, rows), encoding="utf-8")
    return path


def _rows_for(report: dict, kind: str):
    if kind == "eigen-curve":
        return [(r["R"], r["lambda_R"]) for r in report["rows"]]
    if kind == "decay-envelope":
        return [(e["radius"], e["u"], e["bound"]) for e in report["envelope"]]
    if kind == "hitting-curve":
        return [(c["T"], c["P_hat"], c["wilson_lo"], c["wilson_hi"]) for c in report["curve"]]
    if kind == "radon-profile":
        return list(zip(report["s"], report["w"]))
    raise ValueError(f"unknown plot kind {kind!r}")


_KIND_KEYS = {"eigen-curve": "rows", "decay-envelope": "envelope", "hitting-curve": "curve",
              "radon-profile": "w"}


def emit_plotdata(report: dict, kind: str, path=None) -> str:
    """CSV text (written to ``path`` if given) for one of :data:`PLOT_KINDS`."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_KINDS)}")
    if _KIND_KEYS[kind] not in report:
        raise ValueError(f"report does not contain {kind} data")
    text = csv_text(PLOT_KINDS[kind], _rows_for(report, kind))
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _versions() -> dict:
    import scipy

    from . import __version__, backend

    return {"critlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "backend": backend.NAME}


class RunManifest:
    """Everything needed to replay a command: config text, overrides, seed."""

    def __init__(self, command: str, config_path, config_text: str, overrides: dict,
                 resolved: dict, output_dir, seed: int | None, target: str | None = None):
        self.command = command
        self.config_path = None if config_path is None else str(config_path)
        self.config_text = config_text
        self.overrides = dict(overrides)
        self.resolved = dict(resolved)
        self.output_dir = str(output_dir)
        self.seed = seed
        self.target = target
        self.outputs: list = []
        self.status: dict = {}

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "target": self.target,
            "config_path": self.config_path,
            "config_text": self.config_text,
            "config_sha256": hashlib.sha256(self.config_text.encode()).hexdigest(),
            "overrides": self.overrides,
            "resolved": self.resolved,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "versions": _versions(),
            "outputs": sorted(self.outputs),
            "status": self.status,
        }

    def write(self, directory) -> Path:
        return write_json(Path(directory) / "manifest.json", self.to_dict())

    @staticmethod
    def load(path) -> dict:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        for key in ("command", "config_text", "overrides"):
            if key not in data:
                raise ValueError(f"manifest lacks {key!r}")
        return data
