import json
import math
import subprocess
import sys

import numpy as np
import pytest

from bbmre import cli
from bbmre.env import EnvSpec, sample_environment, save_environment
from bbmre.lab import ConfigError, ExperimentConfig, ResultTable, RunManifest, emit_csv, emit_svg, read_csv, run
from bbmre.lab.config import parse_config_text
from bbmre.lab.experiments import newey_west_slope, output_dir, record_maxima
from bbmre.lab.io import Curve

QUICK_DUALITY = "experiment = duality\nseed = 3\nt = 1.0\ny = 1.0\nn_trees = 200\n"


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("BBMRE_OUTPUT_ROOT", str(tmp_path))
    return tmp_path


def test_parse_config_text():
    d = parse_config_text("experiment = duality  # comment\n\nt = 2\nflag = true\nseeds = 1, 2\nname = abc\n")
    assert d == {"experiment": "duality", "t": 2, "flag": True, "seeds": (1, 2), "name": "abc"}
    with pytest.raises(ConfigError):
        parse_config_text("t = 1\nt = 2\n")
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign\n")


def test_config_validation():
    with pytest.raises(ConfigError, match="unknown experiment"):
        ExperimentConfig.from_text("experiment = nonsense\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("seed = 1\n")
    with pytest.raises(ConfigError, match="unknown parameter"):
        ExperimentConfig.from_text("experiment = duality\nbogus = 1\n")
    with pytest.raises(ConfigError, match="outside"):
        ExperimentConfig.from_text("experiment = duality\nt = -1\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("experiment = duality\nenv.colour = red\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("experiment = duality\nenv.ei = 2\nenv.es = 1\n")


def test_config_hash():
    a = ExperimentConfig.from_text(QUICK_DUALITY)
    b = ExperimentConfig.from_text("# same run\nn_trees = 200\nseed = 3\ny = 1.0\nt = 1.0\nexperiment = duality\n"
                                   "out = elsewhere\n")
    assert a.hash == b.hash
    # spelling out a default does not change the run
    assert ExperimentConfig.from_text(QUICK_DUALITY + "x0 = 0.0\n").hash == a.hash
    assert ExperimentConfig.from_text(QUICK_DUALITY.replace("seed = 3", "seed = 4")).hash != a.hash


def test_hash_follows_environment_file_contents(tmp_path):
    path = tmp_path / "env.txt"
    spec = EnvSpec("interpolated-iid", 0.5, 1.5, x_lo=-20, x_hi=20)
    save_environment(sample_environment(spec, 1), path)
    text = f"experiment = duality\nenv.file = {path}\n"
    h1 = ExperimentConfig.from_text(text).hash
    save_environment(sample_environment(spec, 2), path)
    assert ExperimentConfig.from_text(text).hash != h1
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(f"experiment = duality\nenv.file = {tmp_path / 'missing.txt'}\n")


def test_csv_round_trip(tmp_path):
    t = ResultTable({"i": np.arange(4), "x": np.array([0.1, 1 / 3, math.pi, -2e-300]), "s": ["a", "b", "c", "d"]})
    p = emit_csv(t, tmp_path / "t.csv")
    assert read_csv(p) == t
    with pytest.raises(ValueError):
        ResultTable({})
    with pytest.raises(ValueError):
        ResultTable({"a": [1, 2], "b": [1]})
    with pytest.raises(ValueError):
        ResultTable({"a": []})


def test_svg_has_one_polyline_per_curve(tmp_path):
    x = np.linspace(0, 1, 20)
    p = emit_svg([Curve(x, x**2, "a"), Curve(x, np.sin(x), "b<c", right_axis=True)], tmp_path / "f.svg",
                 config_hash="abc123")
    text = p.read_text()
    assert text.count("<polyline") == 2 and "b&lt;c" in text and "abc123" in text
    with pytest.raises(ValueError):
        emit_svg([], tmp_path / "g.svg")


def test_newey_west_and_records():
    t = np.arange(200.0)
    noise = np.random.default_rng(0).normal(size=200)
    slope, se, lags = newey_west_slope(t, 0.5 * t + noise)
    assert abs(slope - 0.5) < 4 * se and lags == math.ceil(1.3 * math.sqrt(200))
    # exact line: zero residuals
    assert newey_west_slope(t, 2 * t + 1)[0] == pytest.approx(2.0)
    v = np.array([1.0, 0.5, 2.0, 2.0, 3.0, 3.5, 1.0])
    rt, rv = record_maxima(np.arange(7.0), v)
    assert list(rt) == [0, 2, 4, 5] and list(rv) == [1.0, 2.0, 3.0, 3.5]
    rt, rv = record_maxima(np.arange(7.0), v, start=1.0, min_increment=0.75)
    assert list(rt) == [1, 2, 4]


def test_run_writes_manifest_and_is_deterministic(out_root):
    cfg = ExperimentConfig.from_text(QUICK_DUALITY)
    man = run(cfg)
    d = output_dir(cfg)
    assert d.parent == out_root and d.name == f"duality-{cfg.hash}"
    assert not (d / "PARTIAL").exists()
    assert (d / "config.txt").read_text() == cfg.canonical_text()
    on_disk = RunManifest.read(d / "manifest.json")
    assert on_disk.checksums() == man.checksums() and set(on_disk.checks) == {"duality_within_3se"}
    first = man.checksums()
    assert run(cfg).checksums() == first


def test_failed_run_leaves_partial_marker(out_root):
    cfg = ExperimentConfig.from_text(QUICK_DUALITY + "env.x_lo = -3\nenv.x_hi = 3\n")
    with pytest.raises(Exception):
        run(cfg)
    marker = output_dir(cfg) / "PARTIAL"
    assert marker.exists() and marker.read_text().startswith("failed")
    assert not (output_dir(cfg) / "manifest.json").exists()


def test_cli_exit_codes(out_root, capsys, tmp_path):
    assert cli.main(["lab", "check", "duality", "--set", "t=1.0", "--set", "y=1.0", "--set", "n_trees=200"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["checks"] == {"duality_within_3se": True}
    # a zero tolerance cannot be met by a fitted speed
    assert cli.main(["lab", "check", "homogeneous-speed", "--set", "t_lo=2", "--set", "t_hi=4",
                     "--set", "tol=0"]) == 2
    assert cli.main(["lab", "check", "duality", "--set", "t=-1"]) == 1
    capsys.readouterr()
    assert cli.main(["pde", "solve-fkpp", "--env", "const:1:-40:40", "--y", "1", "--t-end", "1",
                     "--out", str(tmp_path / "w.csv")]) == 0
    w = read_csv(tmp_path / "w.csv")
    assert w.names == ["x", "w"] and np.all(np.diff(w["w"]) >= -1e-12)


def test_cli_env_round_trip(tmp_path, capsys):
    f = tmp_path / "e.txt"
    assert cli.main(["env", "sample", "--kind", "lattice-iid", "--ei", "0.5", "--es", "1", "--seed", "2",
                     "-o", str(f)]) == 0
    capsys.readouterr()
    assert cli.main(["env", "show", str(f)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["kind"] == "lattice-iid" and info["seed"] == 2


def test_cli_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "bbmre.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("bbmre ")
