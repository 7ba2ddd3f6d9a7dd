import csv
import json
import subprocess
import sys

import pytest

from degenerate_neumann import cli, suite
from degenerate_neumann.suite import CriterionResult

SMALL = """
[discretization]
n = 41
nt = 40

[carleman]
s_count = 4
ensemble = 3

[observability]
samples = 4
"""


def _read(path):
    return path.read_bytes()


def test_classify_weak_report(tmp_path, capsys):
    status = cli.run("classify", out=str(tmp_path), text="[model]\nK = 0.5\n")
    out = capsys.readouterr().out
    assert status == cli.EXIT_OK
    assert "weak" in out
    assert "theta = K = 0.5" in out
    payload = json.loads((tmp_path / "classify.json").read_text())
    assert payload["class"] == "weak" and payload["theta"] == 0.5
    assert payload["config"]["model"]["K"] == 0.5


def test_classify_strong(tmp_path, capsys):
    assert cli.run("classify", out=str(tmp_path), text="[model]\nK = 1.5\nform = \"nondivergence\"\n") == 0
    assert "degeneracy: strong" in capsys.readouterr().out


@pytest.mark.parametrize("command", ["classify", "weights", "carleman-scan"])
def test_out_of_theory_refusal(tmp_path, command, capsys):
    status = cli.run(command, out=str(tmp_path), text="[model]\nK = 2.0\n")
    assert status == cli.EXIT_THEORY
    assert "refused" in capsys.readouterr().err


@pytest.mark.parametrize("text, line", [
    ("[model]\nx0 = 0.5\nK = \"big\"\n", 3),
    ("[model]\nx0 = 1.5\n", 2),
    ("\n[weights]\nc1 = 1.0\nbogus = 2\n", 4),
    ("[nonsense]\n", 1),
    ("[model\nK = 1\n", 1),
    ("[discretization]\n\nn = 3\n", 3),
    ("[observability]\nomega = [0.8, 0.2]\n", 2),
    ("[control]\nepsilon = [1e-6, -1.0]\n", 2),
    ("[weights]\nc2 = \"large\"\n", 2),
])
def test_config_errors_have_line_numbers(tmp_path, capsys, text, line):
    assert cli.run("weights", out=str(tmp_path), text=text) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"line {line}:" in err


def test_missing_config_file(tmp_path, capsys):
    assert cli.run("classify", config=str(tmp_path / "nope.toml"), out=str(tmp_path)) == cli.EXIT_CONFIG


def test_bad_seed(tmp_path):
    assert cli.run("classify", out=str(tmp_path), seed=-1) == cli.EXIT_CONFIG
    assert cli.run("classify", out=str(tmp_path), seed=2 ** 64) == cli.EXIT_CONFIG


def test_weights_resolves_auto_constants(tmp_path, capsys):
    assert cli.run("weights", out=str(tmp_path)) == 0
    payload = json.loads((tmp_path / "weights.json").read_text())
    w = payload["config"]["weights"]
    assert all(isinstance(w[k], float) for k in ("c1", "c2", "d1", "d2", "lambda2"))
    assert "auto" not in json.dumps(payload)
    assert payload["admissible"]["psi"]["ok"] and payload["admissible"]["mu"]["ok"]
    assert "warning" in capsys.readouterr().err
    with open(tmp_path / "weights_space.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "psi", "mu"] and len(rows) == 1002
    assert (tmp_path / "weights_time.csv").read_text().startswith("t,Theta")


def test_explicit_weights_are_kept(tmp_path):
    assert cli.run("weights", out=str(tmp_path), text="[weights]\nc1 = 3\nc2 = 1.0\n") == 0
    w = json.loads((tmp_path / "weights.json").read_text())["config"]["weights"]
    assert w["c1"] == 3.0 and w["c2"] == 1.0


@pytest.mark.parametrize("text", ["[weights]\nc2 = 0.01\n", "[weights]\nd2 = 0.1\n"])
def test_inadmissible_explicit_weight(tmp_path, capsys, text):
    assert cli.run("weights", out=str(tmp_path), text=text) == cli.EXIT_CONFIG
    assert "line 2:" in capsys.readouterr().err


def test_solve_writes_trajectory(tmp_path):
    assert cli.run("solve", out=str(tmp_path), text=SMALL + "\n[solve]\nsource = 1.0\n") == 0
    lines = (tmp_path / "solve.csv").read_text().splitlines()
    assert lines[0] == "t,x,u" and len(lines) == 1 + 41 * 41
    assert json.loads((tmp_path / "solve.json").read_text())["energy"]["passed"]
    assert (tmp_path / "grid.csv").exists()


@pytest.mark.parametrize("command", ["carleman-scan", "observability", "control", "solve"])
def test_same_seed_gives_identical_files(tmp_path, command):
    cfg = SMALL + "\n[solve]\nu0 = \"random\"\n\n[control]\nu0 = \"random\"\nepsilon = [1e-4, 1e-5]\n"
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.run(command, out=str(a), seed=11, text=cfg) == 0
    assert cli.run(command, out=str(b), seed=11, text=cfg) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert _read(a / name) == _read(b / name), name


def test_different_seed_changes_the_ensemble(tmp_path):
    assert cli.run("carleman-scan", out=str(tmp_path / "a"), seed=1, text=SMALL) == 0
    assert cli.run("carleman-scan", out=str(tmp_path / "b"), seed=2, text=SMALL) == 0
    assert _read(tmp_path / "a" / "carleman_scan.csv") != _read(tmp_path / "b" / "carleman_scan.csv")


def test_carleman_scan_outputs(tmp_path):
    assert cli.run("carleman-scan", out=str(tmp_path), text=SMALL, threads=2) == 0
    lines = (tmp_path / "carleman_scan.csv").read_text().splitlines()
    assert lines[0].split(",")[:5] == ["s", "member", "lhs", "rhs", "ratio"]
    assert len(lines) == 1 + 3 * 4 + 1
    payload = json.loads((tmp_path / "carleman_scan.json").read_text())
    assert payload["generator"] == "numpy.random.PCG64"
    assert payload["report"]["ensemble"]["count"] == 3


def test_localized_scan_needs_x0_in_omega(tmp_path):
    text = SMALL.replace("ensemble = 3", "ensemble = 3\nomega = [0.6, 0.8]")
    assert cli.run("carleman-scan", out=str(tmp_path), text=text) == cli.EXIT_THEORY


def test_observability_and_control(tmp_path):
    assert cli.run("observability", out=str(tmp_path), text=SMALL) == 0
    rep = json.loads((tmp_path / "observability.json").read_text())["report"]
    assert rep["converged"] and rep["dominates_samples"]
    text = SMALL + "\n[control]\nepsilon = [1e-4, 1e-6]\n"
    assert cli.run("control", out=str(tmp_path), text=text) == 0
    runs = json.loads((tmp_path / "control.json").read_text())["runs"]
    assert [r["epsilon"] for r in runs] == [1e-4, 1e-6]
    assert runs[1]["final_norm"] < runs[0]["final_norm"]
    assert all(r["verification"]["agreement"] <= 1e-10 for r in runs)
    assert (tmp_path / "control_0.csv").exists() and (tmp_path / "control_1.csv").exists()


def test_suite_subset_and_strict(tmp_path, monkeypatch, capsys):
    assert cli.run("suite", out=str(tmp_path), text="[suite]\ncriteria = [4, 10]\n") == 0
    with open(tmp_path / "suite.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["criterion"] for r in rows] == ["4", "10"]
    assert "[PASS] criterion 10" in capsys.readouterr().out

    def failing():
        return CriterionResult(10, "forced failure", False)

    monkeypatch.setitem(suite.CRITERIA, 10, failing)
    assert cli.run("suite", out=str(tmp_path), text="[suite]\ncriteria = [10]\n") == 0
    assert cli.run("suite", out=str(tmp_path), text="[suite]\ncriteria = [10]\n", strict=True) == cli.EXIT_NUMERICAL


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[model]\nK = 0.5\n")
    proc = subprocess.run([sys.executable, "-m", "degenerate_neumann", "classify", "--config", str(cfg),
                           "--out", str(tmp_path / "o"), "--seed", "3"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "weak" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "degenerate_neumann", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode != 0
