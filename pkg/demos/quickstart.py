"""Plan, fly and draw a three-vehicle encounter on a 600 m square.

Two vehicles fly head-on along the same line and a third crosses their path.
Vehicle 1 has top priority and flies straight; vehicle 2 must bend around the
moving disc that vehicle 1 reserves; vehicle 3 avoids both. The plan is then
flown 20 times under random wind plus once under the worst-case wind.

Run from the repository root::

    python demos/quickstart.py [output_dir]
"""

import sys
from pathlib import Path

import numpy as np

from hjspp.cli import plot_trajectories
from hjspp.planner import plan_all, validate_plan, write_run
from hjspp.scenario_io import build_scenario
from hjspp.sim import DisturbanceModel, safety_report, simulate, write_trace_csv

BOUNDS = {"v_min": 0.0, "v_max": 25.0, "omega_max": 2.0}
REDUCED = {"v_min": 11.0, "v_max": 13.0, "omega_max": 1.2}


def vehicle(vid, x0, center, sta=0.0):
    return {"id": vid, "x0": list(x0), "target": {"center": list(center), "radius": 70.0},
            "sta": sta, "bounds": BOUNDS, "reduced": REDUCED, "d_max": 6.0, "R_EB": 5.0}


DOC = {
    "schema_version": 1,
    "name": "quickstart",
    "planning_grid": {"mins": [0, 0], "maxs": [600, 600], "counts": [61, 61, 36]},
    "rc": 10.0,
    # finite-horizon tracking-error set, see the README
    "solver": {"eb_horizon": 0.5},
    "vehicles": [
        vehicle("1", (50, 300, 0.0), (540, 300)),
        vehicle("2", (550, 300, np.pi), (60, 300)),
        vehicle("3", (300, 50, np.pi / 2), (300, 540), sta=4.0),
    ],
}


def main(out=Path("quickstart_run")):
    scenario = build_scenario(DOC)
    mp = plan_all(scenario)
    if not mp.ok:
        raise SystemExit(f"planning failed: {mp.failure}")
    for vp in mp.vehicles:
        print(f"vehicle {vp.spec.id}: leaves at {vp.plan.ldt:6.2f} s, arrives {vp.plan.arrival:6.2f} s "
              f"(sta {vp.plan.sta:g}), tracking bound {vp.radius_pos:.2f} m")
    validation = validate_plan(mp, scenario)
    print("static plan checks pass:", validation["pass"])
    write_run(out, mp, scenario_doc=DOC, validation=validation)

    models = [DisturbanceModel("uniform", 6.0, seed=s) for s in range(20)]
    models.append(DisturbanceModel("worst_case", 6.0))
    trace = simulate(mp, scenario, models)
    report = safety_report(trace, scenario)
    worst = trace.metrics["max_error_norm"].max()
    print(f"{len(models)} flights: {report['violation_count']} violations, closest approach "
          f"{trace.metrics['min_pairwise_distance'].min():.1f} m, largest tracking error {worst:.2f} m")

    (out / "sim").mkdir(exist_ok=True)
    write_trace_csv(trace, out / "sim" / "trace.csv", run=len(models) - 1)
    svg = plot_trajectories(out, out / "trajectories.svg", out / "sim" / "trace.csv")
    print("figure:", svg)


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("quickstart_run"))
