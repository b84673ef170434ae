import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from critlab import cli
from critlab.config import Config, ConfigError, load_config
from critlab.reporting import PLOT_KINDS, RunManifest, default_output_dir, emit_plotdata

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(*argv):
    return cli.main([str(a) for a in argv])


# config parsing ------------------------------------------------------------


def test_syntax_error_has_line_and_offset():
    cfg = load_config(CONFIGS / "bad_syntax.cfg")
    with pytest.raises(ConfigError) as err:
        cfg.scenario()
    assert err.value.line == 5 and err.value.offset == 10
    assert "expected a number" in str(err.value)
    assert str(err.value).startswith(f"{CONFIGS / 'bad_syntax.cfg'}:5:10:")


def test_expression_error_offset_points_into_value():
    cfg = Config("[scenario]\ndimension = 2\nV = exp(x1 +* 2)\n")
    with pytest.raises(ConfigError) as err:
        cfg.scenario()
    assert err.value.line == 3
    assert err.value.offset > len("V = exp(x1")


def test_parser_errors_carry_line():
    with pytest.raises(ConfigError) as err:
        Config("[domain]\nradius = 1\nradius = 2\n")
    assert err.value.line == 3


def test_missing_key():
    with pytest.raises(ConfigError, match="dimension"):
        Config("[domain]\nradius = 1\n").scenario()


def test_overrides_and_recording():
    cfg = Config("[scenario]\npreset = laplace-1d\n[domain]\nradius = 1\n",
                 overrides={"domain.radius": "3"})
    sc = cfg.scenario()
    assert sc.radius == 3.0
    assert cfg.resolved()["domain.radius"] == "3"
    assert cfg.overrides == {"domain.radius": "3"}
    with pytest.raises(ConfigError):
        cfg.set("radius", 2)


def test_inline_comments():
    cfg = Config("# header\n; other\n[mc]\npaths = 10  # ten\n")
    assert cfg.get_int("mc", "paths") == 10


def test_typed_getters():
    cfg = Config("[x]\nf = 1.5\ni = 4\nb = yes\nl = 1, 2 3\np = 1,0; 2,0\nbad = 1.5\n")
    assert cfg.get_float("x", "f") == 1.5
    assert cfg.get_int("x", "i") == 4
    assert cfg.get_bool("x", "b") is True
    assert cfg.get_floats("x", "l") == [1.0, 2.0, 3.0]
    assert cfg.get_points("x", "p") == [[1.0, 0.0], [2.0, 0.0]]
    assert cfg.get_float("x", "missing", 7.0) == 7.0
    with pytest.raises(ConfigError, match="integer"):
        cfg.get_int("x", "bad")
    with pytest.raises(ConfigError, match="boolean"):
        cfg.get_bool("x", "f")


def test_inline_scenario():
    cfg = Config("[scenario]\ndimension = 2\na11 = 2\nb1 = -x1\nV = exp(-r^2)\n"
                 "[domain]\nradius = 2\nh = 0.25\n")
    sc = cfg.scenario()
    assert sc.d == 2 and sc.radius == 2.0 and sc.h == 0.25
    spec = sc.spec
    pts = np.array([[1.0, 0.0]])
    assert spec.a[0][0].evaluate(pts)[0] == 2.0
    assert spec.b[0].evaluate(pts)[0] == -1.0
    assert spec.V.evaluate(pts)[0] == pytest.approx(np.exp(-1.0))


def test_unknown_preset():
    with pytest.raises(ConfigError, match="preset"):
        Config("[scenario]\npreset = nowhere\n").scenario()


# exit codes ------------------------------------------------------------------


def test_exit_success(tmp_path, capsys):
    assert run("run", "eig", CONFIGS / "laplace1d.cfg", "--radius", 1, "--h", 0.01,
               "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["lambda"] == pytest.approx(-2.467, abs=1e-3)
    assert "lambda" in capsys.readouterr().out


def test_exit_verdict_failure(tmp_path):
    assert run("run", "decay-cert", CONFIGS / "expdecay_fake.cfg", "--out", tmp_path) == 2
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["certificate"]["status"] == "failed"
    assert json.loads((tmp_path / "manifest.json").read_text())["status"]["exit_code"] == 2


def test_exit_config_error(tmp_path, capsys):
    assert run("run", "eig", CONFIGS / "bad_syntax.cfg", "--out", tmp_path) == 1
    assert "bad_syntax.cfg:5:10" in capsys.readouterr().err


def test_exit_crash(tmp_path, capsys):
    assert run("run", "eig", tmp_path / "absent.cfg", "--out", tmp_path) == 1
    assert "error" in capsys.readouterr().err


def test_missing_config_argument(capsys):
    assert run("run", "eig") == 1


def test_verified_decay(tmp_path):
    assert run("run", "decay-cert", CONFIGS / "expdecay.cfg", "--out", tmp_path) == 0
    text = (tmp_path / "decay-envelope.csv").read_text()
    assert text.splitlines()[0] == "|x|,u,C*Lambda"


def test_scenarios_listing(capsys):
    assert run("scenarios") == 0
    out = capsys.readouterr().out
    assert "laplace-1d" in out and "hardy" in out


def test_set_and_flag_recorded(tmp_path):
    assert run("run", "eig", CONFIGS / "laplace1d.cfg", "--set", "domain.h=0.05",
               "--radius", 2, "--out", tmp_path) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["overrides"] == {"domain.h": "0.05", "domain.radius": "2"}
    assert man["resolved"]["domain.h"] == "0.05"
    assert run("run", "eig", CONFIGS / "laplace1d.cfg", "--set", "nokey", "--out", tmp_path) == 1


# manifests and replay ----------------------------------------------------------


def test_manifest_fields(tmp_path):
    run("run", "eig", CONFIGS / "laplace1d.cfg", "--out", tmp_path)
    man = RunManifest.load(tmp_path / "manifest.json")
    for key in ("command", "config_path", "config_text", "config_sha256", "resolved",
                "output_dir", "seed", "versions", "outputs", "status"):
        assert key in man
    assert man["command"] == "eig"
    assert man["outputs"] == ["report.json"]
    assert man["versions"]["backend"] in ("compiled", "python")


def test_manifest_load_rejects_incomplete(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"command": "eig"}))
    with pytest.raises(ValueError, match="config_text"):
        RunManifest.load(p)


def _artifacts(directory):
    return {p.name: p.read_bytes() for p in Path(directory).iterdir()
            if p.suffix == ".csv" or p.name == "report.json"}


@pytest.mark.parametrize("command,config,extra", [
    ("mc-verify", "fk1d.cfg", ["--paths", 400, "--t-max", 50, "--seed", 11]),
    ("twist", "hardy3d.cfg", ["--paths", 200]),
    ("lambda-star", "bump1d.cfg", []),
])
def test_replay_byte_identical(tmp_path, command, config, extra):
    first = tmp_path / "first"
    code = run("run", command, CONFIGS / config, "--out", first, *extra)
    assert code in (0, 2)
    assert run("replay", first / "manifest.json", "--out", tmp_path / "again") == code
    a, b = _artifacts(first), _artifacts(tmp_path / "again")
    assert a.keys() == b.keys() and any(k.endswith(".csv") for k in a)
    assert a == b


def test_replay_default_location(tmp_path):
    run("run", "eig", CONFIGS / "laplace1d.cfg", "--out", tmp_path)
    assert run("replay", tmp_path / "manifest.json") == 0
    assert (tmp_path / "replay" / "report.json").read_bytes() == \
        (tmp_path / "report.json").read_bytes()


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CRITLAB_OUTPUT_DIR", str(tmp_path / "env"))
    assert default_output_dir() == str(tmp_path / "env")
    assert run("run", "eig", CONFIGS / "laplace1d.cfg") == 0
    assert (tmp_path / "env" / "laplace1d-eig" / "manifest.json").exists()
    monkeypatch.delenv("CRITLAB_OUTPUT_DIR")
    assert default_output_dir() == "critlab-out"


# plot data -------------------------------------------------------------------------


def test_plot_kind_headers():
    assert PLOT_KINDS["eigen-curve"] == ("R", "lambda_R")
    assert PLOT_KINDS["decay-envelope"] == ("|x|", "u", "C*Lambda")
    assert PLOT_KINDS["hitting-curve"] == ("T", "P_hat", "wilson_lo", "wilson_hi")


def test_emit_plotdata(tmp_path):
    rep = {"rows": [{"R": 2.0, "lambda_R": -1.0}, {"R": 4.0, "lambda_R": -0.5}]}
    text = emit_plotdata(rep, "eigen-curve", tmp_path / "c.csv")
    assert text == "R,lambda_R\n2.0,-1.0\n4.0,-0.5\n"
    assert (tmp_path / "c.csv").read_text() == text
    curve = {"curve": [{"T": 1.0, "P_hat": 0.5, "wilson_lo": 0.4, "wilson_hi": 0.6}]}
    assert emit_plotdata(curve, "hitting-curve").splitlines()[1] == "1.0,0.5,0.4,0.6"
    prof = {"s": [0.0, 0.5], "w": [1.0, 0.25]}
    assert emit_plotdata(prof, "radon-profile") == "s,w\n0.0,1.0\n0.5,0.25\n"


def test_emit_plotdata_mismatch():
    with pytest.raises(ValueError, match="does not contain"):
        emit_plotdata({"rows": []}, "hitting-curve")
    with pytest.raises(ValueError, match="unknown plot kind"):
        emit_plotdata({}, "histogram")


# backend selection ----------------------------------------------------------------


@pytest.mark.parametrize("choice", ["python", "compiled"])
def test_backend_env(choice):
    from critlab import backend
    if choice == "compiled" and "compiled" not in backend.available():
        pytest.skip("compiled extension not built")
    env = dict(os.environ, CRITLAB_BACKEND=choice)
    out = subprocess.run([sys.executable, "-c", "from critlab import backend; print(backend.NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == choice
