import json
import subprocess
import sys

import pytest

from heightcond.cli import main, parse_model
from heightcond.model import Exponential

EXP = "exponential:b=0.8,theta=1"


def run(*args):
    return subprocess.run([sys.executable, "-m", "heightcond.cli", *args], capture_output=True, text=True)


def test_help():
    res = run("--help")
    assert res.returncode == 0
    for cmd in ("simulate-tree", "contour", "height", "martingale-check", "records", "condition",
                "spine-compare", "brownian", "suite"):
        assert cmd in res.stdout


def test_parse_model_forms(tmp_path):
    f = tmp_path / "m.json"
    f.write_text(json.dumps({"lifespan": {"kind": "exponential", "b": 0.8, "theta": 1.0}}))
    assert parse_model(str(f)) == Exponential(0.8, 1.0)
    assert parse_model(f.read_text()) == Exponential(0.8, 1.0)
    assert parse_model(EXP) == Exponential(0.8, 1.0)


def test_same_seed_same_output(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}.csv"
        assert main(["records", "--model", EXP, "--x", "1", "--t", "1", "--n", "300", "--seed", "9",
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_workers_do_not_change_output(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["martingale-check", "--model", EXP, "--x", "1", "--n", "2500", "--seed", "4"]
    main(args + ["--out", str(a)])
    main(args + ["--workers", "2", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_tree_contour_height_pipeline(tmp_path):
    tree = tmp_path / "tree.txt"
    path = tmp_path / "path.csv"
    tree.write_text("root 0.0 2.0\n1 1.0 4.0\n")
    assert main(["contour", "--tree", str(tree), "--out", str(path)]) == 0
    out = tmp_path / "h.json"
    assert main(["height", "--path", str(path), "--t", "1.5", "--m", "0.8", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["H"] == 1
    assert doc["rho"] == pytest.approx([1.0, 2.5])
    assert doc["M"] == pytest.approx(4.125)


def test_simulate_tree_json(tmp_path):
    out = tmp_path / "t.json"
    assert main(["simulate-tree", "--model", EXP, "--x", "2", "--seed", "1", "--format", "json",
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["tree"]["nodes"][0]["omega"] == 2.0
    assert main(["contour", "--tree", str(out), "--out", str(tmp_path / "p.csv")]) == 0


@pytest.mark.parametrize("args", [
    ["simulate-tree", "--model", '{"lifespan": {"kind": "exponential", "b": "inf", "theta": 1}}', "--x", "1"],
    ["simulate-tree", "--model", "exponential:b=2,theta=1", "--x", "1"],
    ["height", "--path", "/nonexistent.csv", "--t", "1"],
    ["brownian", "kennedy", "--t-grid", "0.3", "--dt", "0.25"],
])
def test_config_errors_exit_2(args):
    res = run(*args)
    assert res.returncode == 2
    assert "Traceback" not in res.stderr


def test_infinite_mass_message():
    res = run("simulate-tree", "--model", '{"lifespan": {"kind": "exponential", "b": "inf", "theta": 1}}',
              "--x", "1")
    assert "infinite total mass" in res.stderr


def test_condition_routes(tmp_path):
    for route in ("rejection", "importance", "spine"):
        out = tmp_path / f"{route}.csv"
        assert main(["condition", "--route", route, "--model", EXP, "--a", "3", "--n", "50", "--seed", "2",
                     "--out", str(out)]) == 0
        assert out.read_text().startswith("# heightcond")


def test_suite_subset(tmp_path):
    out = tmp_path / "s.json"
    assert main(["suite", "acceptance", "--only", "6,7", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["passed"] == 2 and doc["total"] == 2
