import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
from conftest import small_doc, vehicle

from hjspp.cli import main, parse_model, scenario_hash
from hjspp.scenario_io import ObstacleMask, write_mask
from hjspp.svgplot import count_class


def three_vehicle_doc():
    return small_doc([
        vehicle("1", (40, 200, 0), (360, 200)),
        vehicle("2", (360, 200, np.pi), (40, 200)),
        vehicle("3", (200, 40, np.pi / 2), (200, 360), sta=5.0),
    ])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    (base / "scenario.json").write_text(json.dumps(three_vehicle_doc()))
    code = main(["plan", str(base / "scenario.json"), "--out", str(base / "run")])
    assert code == 0
    return base / "run"


def test_plan_outputs(run_dir):
    report = json.loads((run_dir / "report.json").read_text())
    assert [v["id"] for v in report["vehicles"]] == ["1", "2", "3"]
    assert report["validation"]["pass"]
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["command"] == "plan" and manifest["exit_code"] == 0
    assert manifest["stats"] == {"planning_solves": 3, "error_bound_solves": 1}
    assert len(manifest["scenario_hash"]) == 64


def test_plan_unreadable_path(tmp_path):
    assert main(["plan", str(tmp_path / "nope.json"), "--out", str(tmp_path / "r")]) == 2


def test_plan_infeasible(tmp_path):
    doc = small_doc([vehicle("1", (60, 200, 0), (330, 200), radius=3.0)])
    (tmp_path / "s.json").write_text(json.dumps(doc))
    assert main(["plan", str(tmp_path / "s.json"), "--out", str(tmp_path / "r")]) == 3
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["outcomes"]["1"]["status"] == "failed"


def test_plan_override_recorded(tmp_path):
    doc = small_doc([vehicle("1", (60, 200, 0), (330, 200))])
    (tmp_path / "s.json").write_text(json.dumps(doc))
    assert main(["plan", str(tmp_path / "s.json"), "--out", str(tmp_path / "r"),
                 "--eb-horizon", "0.4"]) == 0
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["overrides"] == {"eb_horizon": 0.4}
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["vehicles"][0]["eb_horizon"] == 0.4


@pytest.mark.parametrize("model", ["uniform", "worst", "constant:-6,0", "none"])
def test_simulate_models(run_dir, tmp_path, model):
    out = tmp_path / "sim"
    assert main(["simulate", str(run_dir), "--model", model, "--seed", "7", "--out", str(out)]) == 0
    safety = json.loads((out / "safety.json").read_text())
    assert safety["violation_count"] == 0 and safety["plan_violations"] == []
    run = safety["runs"][0]
    report = json.loads((run_dir / "report.json").read_text())
    for v in report["vehicles"]:
        assert run["max_error_norm"][v["id"]] <= v["radius_pos"]
    for name in ("trace.csv", "min_distance.csv", "manifest.json"):
        assert (out / name).exists()


def test_simulate_tampered_plan(run_dir, tmp_path, capsys):
    bad = tmp_path / "bad"
    shutil.copytree(run_dir, bad)
    path = bad / "plans" / "vehicle_2.csv"
    rows = list(csv.DictReader(path.open()))
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            r["y"] = "200.0"  # straight through the leader
            w.writerow(r)
    assert main(["simulate", str(bad), "--model", "none"]) == 4
    err = capsys.readouterr().err
    assert "SAFETY VIOLATIONS" in err and "plan_separation" in err


def test_simulate_input_errors(run_dir, tmp_path):
    assert main(["simulate", str(tmp_path / "missing")]) == 2
    assert main(["simulate", str(run_dir), "--model", "gusty", "--out", str(tmp_path / "s")]) == 2
    assert main(["simulate", str(run_dir), "--model", "constant:1", "--out", str(tmp_path / "s")]) == 2
    assert main(["simulate", str(run_dir), "--dt-sim", "100", "--out", str(tmp_path / "s")]) == 2


def test_parse_model():
    m = parse_model("constant:-6,0", 6.0, 3)
    assert m.kind == "constant" and m.vector == (-6.0, 0.0)
    assert parse_model("worst", 6.0, 0).kind == "worst_case"


def test_scenario_hash_stable():
    doc = three_vehicle_doc()
    assert scenario_hash(doc) == scenario_hash(json.loads(json.dumps(doc)))
    doc["rc"] = 11.0
    assert scenario_hash(doc) != scenario_hash(three_vehicle_doc())


def test_plot_trajectories(run_dir, tmp_path):
    out = tmp_path / "traj.svg"
    assert main(["plot", str(run_dir), "trajectories", "--out", str(out)]) == 0
    svg = out.read_text()
    assert count_class(svg, "trajectory", "polyline") == 3
    assert count_class(svg, "target", "circle") == 3


def test_plot_trajectories_with_obstacles(tmp_path):
    occ = np.zeros((40, 40), dtype=bool)
    occ[2:8, 30:36] = True
    write_mask(ObstacleMask(occ, (0, 0), 10.0), tmp_path / "m.pgm")
    doc = small_doc([vehicle("1", (60, 200, 0), (330, 200))],
                    obstacle_mask={"path": "m.pgm", "origin": [0, 0], "cell_size": 10.0})
    (tmp_path / "s.json").write_text(json.dumps(doc))
    assert main(["plan", str(tmp_path / "s.json"), "--out", str(tmp_path / "r")]) == 0
    assert main(["plot", str(tmp_path / "r"), "trajectories", "--out", str(tmp_path / "t.svg")]) == 0
    assert count_class((tmp_path / "t.svg").read_text(), "obstacle", "polyline") == 1


def test_plot_min_dist(run_dir, tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", str(run_dir), "--model", "uniform", "--out", str(sim)]) == 0
    out = tmp_path / "md.svg"
    assert main(["plot", str(run_dir), "min_dist", "--sim-dir", str(sim), "--out", str(out)]) == 0
    svg = out.read_text()
    assert count_class(svg, "min_distance", "polyline") == 1
    assert 'data-y="10"' in svg
    assert main(["plot", str(run_dir), "min_dist", "--sim-dir", str(tmp_path / "none"),
                 "--out", str(out)]) == 2


@pytest.mark.parametrize("panel", ["omega", "v"])
def test_plot_control_law(run_dir, tmp_path, panel):
    out = tmp_path / f"cl_{panel}.svg"
    assert main(["plot", str(run_dir), "control_law", "--panel", panel, "--out", str(out)]) == 0
    svg = out.read_text()
    assert count_class(svg, "cell", "g") == 1
    assert count_class(svg, "omega_boundary", "polyline") >= 1


def test_plot_brs_slice(run_dir, tmp_path):
    out = tmp_path / "brs.svg"
    leader = json.loads((run_dir / "report.json").read_text())["vehicles"][0]
    t = 0.5 * (leader["ldt"] + leader["arrival"])
    assert main(["plot", str(run_dir), "brs_slice", "--vehicle", "2", "--time", str(t),
                 "--out", str(out)]) == 0
    svg = out.read_text()
    assert count_class(svg, "brs", "polyline") >= 1
    assert count_class(svg, "induced_obstacle", "circle") >= 1


def test_verify_oracle_suite(tmp_path):
    assert main(["verify", str(tmp_path), "--suite", "oracle"]) == 0
    names = {c["name"] for c in json.loads((tmp_path / "verify.json").read_text())["suites"][0]["checks"]}
    assert {"oracle.ham_eb", "oracle.ham_rtt", "oracle.distance_transform"} <= names


def test_verify_invariants_suite():
    assert main(["verify", "--suite", "invariants"]) == 0


def test_version_and_entry_point():
    res = subprocess.run([sys.executable, "-m", "hjspp.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("hjspp ")
