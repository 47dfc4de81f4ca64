import json

import pytest

from crowdfluid.cli import main
from crowdfluid.io import read_csv


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def test_verify_passes(tmp_path, capsys):
    assert run(tmp_path, "verify", "--N", "6", "--s", "2") == 0
    _, header, rows = read_csv(tmp_path / "verify.csv")
    assert header == ["check", "value", "tolerance", "passed"]
    assert {r[0] for r in rows} >= {"product_form_tv", "detailed_balance",
                                    "routing_detailed_balance", "kurtz_drift_gap",
                                    "kurtz_jump_rate", "kurtz_large_jump"}
    assert all(r[3] == "true" for r in rows)
    assert (tmp_path / "stationary.csv").exists() and (tmp_path / "generator.csv").exists()
    assert "FAIL" not in capsys.readouterr().out


def test_verify_without_chatting(tmp_path):
    assert run(tmp_path, "verify", "--N", "6", "--s", "0") == 0


def test_verify_fails_on_impossible_tolerance(tmp_path):
    assert run(tmp_path, "verify", "--set", "tolerances.detailed_balance=-1") == 1


def test_verify_capacity_error(tmp_path, capsys):
    assert run(tmp_path, "verify", "--N", "2000") == 2
    assert "above the limit" in capsys.readouterr().err


def test_config_errors(tmp_path):
    assert run(tmp_path, "verify", "--set", "bogus=1") == 2
    assert run(tmp_path, "verify", "--config", str(tmp_path / "missing.json")) == 2
    assert run(tmp_path, "verify", "--N", "3", "--s", "3") == 2
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "fluid"}))
    assert run(tmp_path, "verify", "--config", str(cfg)) == 2


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"experiment": "concentration", "s": 5.0, "N_list": [15, 30],
                               "epsilon": [0.1, 2.0]}))
    assert run(tmp_path, "concentration", "--config", str(cfg), "--N-list", "15", "30", "60") == 0
    meta, header, rows = read_csv(tmp_path / "concentration.csv")
    assert json.loads(meta["config"])["s"] == 5.0
    assert [int(r[0]) for r in rows] == [15, 15, 30, 30, 60, 60]
    # whole simplex
    assert all(float(r[2]) == pytest.approx(1.0) for r in rows if r[1] == "2.0")
    mean_dist = [float(r[3]) for r in rows if r[1] == "0.1"]
    assert mean_dist[0] > mean_dist[1] > mean_dist[2]


def test_concentration_below_threshold(tmp_path):
    assert run(tmp_path, "concentration", "--s", "2") == 0
    _, _, rows = read_csv(tmp_path / "concentration.csv")
    mass = [float(r[2]) for r in rows]
    assert mass == sorted(mass) and len(set(mass)) == 4


def test_bifurcation(tmp_path, capsys):
    assert run(tmp_path, "bifurcation") == 0
    meta, header, rows = read_csv(tmp_path / "bifurcation.csv")
    lo, hi = map(float, meta["bracket"].split(","))
    assert lo <= 2.7456 <= hi
    assert rows[0][0] == "2.0" and rows[-1][0] == "3.5" and len(rows) == 151
    assert "between s=2.74 and s=2.75" in capsys.readouterr().out


def test_bifurcation_from_zero(tmp_path):
    assert run(tmp_path, "bifurcation", "--set", 's_grid={"start": 0, "stop": 0.5, "step": 0.1}') == 0
    _, _, rows = read_csv(tmp_path / "bifurcation.csv")
    assert rows[0][:2] == ["0.0", "1"]


def test_bifurcation_needs_regular_graph(tmp_path):
    assert run(tmp_path, "bifurcation", "--graph", "path", "--size", "3") == 2


def test_fluid_from_uniform_is_constant(tmp_path):
    assert run(tmp_path, "fluid", "--y0", "0.3333333333333333", "0.3333333333333333",
               "0.3333333333333334", "--T", "5") == 0
    _, header, rows = read_csv(tmp_path / "trajectory.csv")
    assert header == ["t", "y_0", "y_1", "y_2"]
    values = [[float(v) for v in r[1:]] for r in rows]
    assert max(abs(v - 1 / 3) for row in values for v in row) <= 1e-10


def test_fluid_default_run(tmp_path, capsys):
    assert run(tmp_path, "fluid") == 0
    out = capsys.readouterr().out
    assert "y(T=30.0)" in out
    _, _, rows = read_csv(tmp_path / "stationary_points.csv")
    assert len(rows) == 1


def test_fluid_on_edge_list(tmp_path):
    edges = tmp_path / "g.txt"
    edges.write_text("0 1\n1 2\n2 3\n")
    assert run(tmp_path, "fluid", "--edge-list", str(edges), "--y0", "0.25", "0.25", "0.25",
               "0.25", "--T", "1", "--s", "6") == 0
    assert run(tmp_path, "fluid", "--edge-list", str(tmp_path / "none.txt")) == 2


def test_convergence_two_rows(tmp_path):
    assert run(tmp_path, "convergence", "--N-list", "100", "400", "--num-seeds", "5",
               "--T", "5", "--seed", "7") == 0
    meta, header, rows = read_csv(tmp_path / "convergence.csv")
    assert header == ["N", "median_dev", "q25", "q75"]
    assert [r[0] for r in rows] == ["100", "400"]
    assert float(rows[1][1]) < float(rows[0][1])
    assert meta["seed"] == "7"
    _, _, runs = read_csv(tmp_path / "convergence_runs.csv")
    assert len(runs) == 10 and runs[0][1] == "7"


def test_convergence_strict_lattice(tmp_path):
    assert run(tmp_path, "convergence", "--N-list", "100", "--num-seeds", "3", "--T", "1",
               "--set", "rounding=error") == 2


def test_critical(tmp_path, capsys):
    assert run(tmp_path, "critical") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("s* = 2.7456")
    assert out[1] == "I,s_star,K,alpha,at_boundary"
    assert out[2].startswith("3,2.7456")
    _, header, rows = read_csv(tmp_path / "critical.csv")
    assert len(rows) == 1 and abs(float(rows[0][1]) - 2.7456) <= 1e-3


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["convergence", "--N-list", "60", "--num-seeds", "3", "--T", "2", "--out", str(d)]) == 0
    assert (a / "convergence_runs.csv").read_text().replace(str(a), "") == \
        (b / "convergence_runs.csv").read_text().replace(str(b), "")
