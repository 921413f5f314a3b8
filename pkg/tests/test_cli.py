import json
import subprocess
import sys

import pytest

from fctdse.cli import main
from fctdse.sim import bundled_scenario_path

SEC6 = str(bundled_scenario_path())


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_simulate_writes_outputs(tmp_path, capsys):
    assert main(["simulate", "--scenario", SEC6, "--out", str(tmp_path), "--decimate", "50"]) == 0
    assert (tmp_path / "traces.csv").exists()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert 0.15 <= summary["latch_times_s"]["1"] <= 0.6
    assert len((tmp_path / "traces.csv").read_text().splitlines()) == 1 + 101


def test_simulate_bad_decimate(capsys):
    assert main(["simulate", "--scenario", SEC6, "--decimate", "0"]) == 1


def test_check_walk_no_closed_walk(sec6, tmp_path, capsys):
    sec6["objective"] = "O2"
    sec6["walk"] = "auto"
    assert main(["check-walk", "--scenario", write(tmp_path, sec6)]) == 1
    assert "no closed Hamiltonian walk" in capsys.readouterr().err


def test_check_walk_ok_and_invalid(sec6, tmp_path, capsys):
    assert main(["check-walk", "--scenario", SEC6]) == 0
    assert json.loads(capsys.readouterr().out)["valid"] is True
    sec6["walk"] = [2, 1]
    assert main(["check-walk", "--scenario", write(tmp_path, sec6)]) == 1
    assert "missing edge 2->1" in capsys.readouterr().out
    sec6["walk"] = "auto"
    assert main(["check-walk", "--scenario", write(tmp_path, sec6)]) == 0
    assert json.loads(capsys.readouterr().out)["walk"] == [1, 2]


def test_decompose_outputs_json(tmp_path, capsys):
    out = tmp_path / "cf.json"
    assert main(["decompose", "--scenario", SEC6, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["dims"] == [2, 4]
    assert all(v["passed"] for v in doc["validation"].values())


def test_decompose_unobservable(sec6, tmp_path, capsys):
    sec6["system"]["sensors"] = [[[1, 0, 0, 2, 0, 0]], [[2, 0, 0, 1, 0, 0]]]
    assert main(["decompose", "--scenario", write(tmp_path, sec6)]) == 1
    assert "rank deficit" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, capsys):
    doc = {
        "system": {"A": [[400.0]], "sensors": [[[1.0]]]},
        "x0": [1.0],
        "graph": {"nodes": 1, "edges": []},
        "t_final": 10.0,
        "dt": 0.01,
    }
    with pytest.warns(RuntimeWarning):
        code = main(["simulate", "--scenario", write(tmp_path, doc), "--out", str(tmp_path)])
    assert code == 2
    assert "numerical failure" in capsys.readouterr().err


def test_compare_reports_delay_shift(sec6, tmp_path, capsys):
    base = tmp_path / "base"
    assert main(["simulate", "--scenario", SEC6, "--out", str(base)]) == 0
    sec6["graph"]["edges"][0]["delay"] = 0.5
    out = tmp_path / "cmp.json"
    assert main(["compare", "--scenario", write(tmp_path, sec6), "--baseline", str(base / "summary.json"), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["agents"]["1"]["latch_shift_s"] == pytest.approx(0.0, abs=1e-12)
    assert rep["agents"]["2"]["latch_shift_s"] == pytest.approx(0.5, abs=2e-3)


def test_missing_file(capsys):
    assert main(["simulate", "--scenario", "/nonexistent.json"]) == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "fctdse.cli", "check-walk", "--scenario", SEC6],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0 and '"walk": [1, 2]' in res.stdout
