"""``hjspp`` command line: plan, simulate, plot and verify.

Exit codes: 0 success, 2 scenario or input error, 3 planning infeasible,
4 safety violation, 5 verification failure.
"""

from __future__ import annotations

import os

if os.environ.get("HJSPP_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["HJSPP_THREADS"])

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from hjspp import __version__

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_INFEASIBLE = 3
EXIT_UNSAFE = 4
EXIT_VERIFY = 5

log = logging.getLogger("hjspp")


class InputError(Exception):
    """A missing or malformed input; maps to exit code 2."""


# -- helpers ---------------------------------------------------------------------


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def scenario_hash(doc: dict) -> str:
    """Hash of a normalised scenario, with the mask path replaced by the mask's contents."""
    d = copy.deepcopy(doc)
    if d.get("obstacle_mask"):
        p = Path(d["obstacle_mask"]["path"])
        d["obstacle_mask"]["path"] = _sha256_file(p) if p.exists() else str(p)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir, command: str, doc: dict | None, overrides: dict, timings: dict,
                   outcomes, extra: dict | None = None) -> Path:
    from hjspp.planner import dump_json

    manifest = {
        "tool": "hjspp",
        "version": __version__,
        "command": command,
        "argv": sys.argv[1:],
        "scenario_hash": scenario_hash(doc) if doc is not None else None,
        "overrides": overrides,
        "timings": timings,
        "outcomes": outcomes,
    }
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / "manifest.json"
    dump_json(manifest, path)
    return path


def parse_model(text: str, d_max: float, seed: int):
    """``none``, ``uniform``, ``worst`` (or ``worst_case``) or ``constant:dx,dy``."""
    from hjspp.sim import DisturbanceModel

    if text.startswith("constant"):
        _, _, rest = text.partition(":")
        try:
            vec = tuple(float(v) for v in rest.split(","))
        except ValueError:
            raise InputError(f"bad constant disturbance {text!r}; expected constant:dx,dy") from None
        if len(vec) != 2:
            raise InputError(f"bad constant disturbance {text!r}; expected constant:dx,dy")
        return DisturbanceModel("constant", d_max, vec, seed)
    kind = {"worst": "worst_case"}.get(text, text)
    try:
        return DisturbanceModel(kind, d_max, seed=seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _load_run(run_dir):
    from hjspp.planner import read_run
    from hjspp.scenario_io import ScenarioError, build_scenario

    run = Path(run_dir)
    for name in ("report.json", "scenario.json"):
        if not (run / name).exists():
            raise InputError(f"missing {run / name}; run 'hjspp plan' first")
    doc = json.loads((run / "scenario.json").read_text())
    try:
        scenario = build_scenario(doc, run)
    except ScenarioError as exc:
        raise InputError(f"run scenario: {exc}") from None
    report = json.loads((run / "report.json").read_text())
    if not report.get("vehicles"):
        raise InputError(f"{run} holds no planned vehicles")
    try:
        mp = read_run(run, scenario)
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read run {run}: {exc}") from None
    return doc, scenario, mp, report


# -- plan ------------------------------------------------------------------------


def cmd_plan(args) -> int:
    from hjspp.planner import plan_all, validate_plan, write_run
    from hjspp.scenario_io import ScenarioError, build_scenario, load_document

    timings = {}
    t0 = time.perf_counter()
    overrides = {}
    try:
        doc = load_document(args.scenario)
        if args.cfl is not None:
            doc["solver"]["cfl_factor"] = args.cfl
            overrides["cfl_factor"] = args.cfl
        if args.eb_horizon is not None:
            doc["solver"]["eb_horizon"] = args.eb_horizon
            overrides["eb_horizon"] = args.eb_horizon
        scenario = build_scenario(doc)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    timings["load"] = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    mp = plan_all(scenario)
    timings["plan_all"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    validation = validate_plan(mp, scenario) if mp.vehicles else {"pass": False, "vehicles": {}}
    timings["validate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    write_run(out, mp, scenario_doc=doc, validation=validation)
    timings["write"] = time.perf_counter() - t0

    outcomes = {vp.spec.id: {"status": "planned", "ldt": vp.plan.ldt, "arrival": vp.plan.arrival,
                             "radius_pos": vp.radius_pos} for vp in mp.vehicles}
    if mp.failure:
        outcomes[mp.failure["vehicle"]] = {"status": "failed", **mp.failure}
    code = EXIT_OK
    if not mp.ok:
        f = mp.failure
        print(f"infeasible: vehicle {f['vehicle']} at stage {f['stage']}: {f['message']}", file=sys.stderr)
        code = EXIT_INFEASIBLE
    elif not validation["pass"]:
        print("infeasible: plan validation failed", file=sys.stderr)
        code = EXIT_INFEASIBLE
    write_manifest(out, "plan", doc, overrides, timings, outcomes,
                   {"exit_code": code, "stats": mp.stats})
    if code == EXIT_OK:
        for vp in mp.vehicles:
            print(f"vehicle {vp.spec.id}: ldt {vp.plan.ldt:.2f} s, arrival {vp.plan.arrival:.2f} s, "
                  f"radius_pos {vp.radius_pos:.2f} m")
        print(f"plan written to {out}")
    return code


# -- simulate ----------------------------------------------------------------------


def write_min_distance_csv(trace, path, run: int = 0) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "min_distance"])
        for t, d in zip(trace.times, trace.min_distance_series[run]):
            w.writerow([repr(float(t)), repr(float(d)) if np.isfinite(d) else ""])


def cmd_simulate(args) -> int:
    from hjspp.planner import dump_json, validate_plan
    from hjspp.sim import safety_report, simulate, write_trace_csv

    timings = {}
    doc, scenario, mp, report = _load_run(args.run_dir)
    out = Path(args.out) if args.out else Path(args.run_dir) / "sim"
    out.mkdir(parents=True, exist_ok=True)
    d_max = max(v.tracker.d_max for v in scenario.vehicles)
    sim_opts = scenario.sim or {}
    model_text = args.model or {"worst_case": "worst"}.get(sim_opts.get("model", "uniform"),
                                                           sim_opts.get("model", "uniform"))
    if model_text == "constant" and sim_opts.get("constant") is not None:
        model_text = "constant:" + ",".join(str(v) for v in sim_opts["constant"])
    seed = args.seed if args.seed is not None else int(sim_opts.get("seed", 0))
    models = [parse_model(model_text, d_max, seed + k) for k in range(args.runs)]
    dt = args.dt_sim if args.dt_sim is not None else sim_opts.get("dt")

    t0 = time.perf_counter()
    validation = validate_plan(mp, scenario)
    timings["validate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    try:
        trace = simulate(mp, scenario, models, dt_sim=dt)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    timings["simulate"] = time.perf_counter() - t0
    safety = safety_report(trace, scenario)
    plan_violations = [
        {"type": f"plan_{check}", "vehicle": vid, **{k: v for k, v in res.items() if k != "pass"}}
        for vid, checks in validation["vehicles"].items()
        for check, res in checks.items() if not res["pass"]
    ]
    safety["plan_violations"] = plan_violations
    write_trace_csv(trace, out / "trace.csv")
    write_min_distance_csv(trace, out / "min_distance.csv")
    dump_json(safety, out / "safety.json")
    total = safety["violation_count"] + len(plan_violations)
    code = EXIT_UNSAFE if total else EXIT_OK
    outcomes = {
        vid: {"max_error_norm": float(trace.metrics["max_error_norm"][:, j].max()),
              "radius_pos": float(trace.metrics["radius_pos"][j])}
        for j, vid in enumerate(trace.vehicle_ids)
    }
    write_manifest(out, "simulate", doc,
                   {"model": model_text, "seed": seed, "runs": args.runs, "dt_sim": trace.times[1] - trace.times[0]
                    if len(trace.times) > 1 else None},
                   timings, outcomes, {"exit_code": code, "run_dir": str(Path(args.run_dir).resolve())})
    if total:
        print(f"SAFETY VIOLATIONS: {total}", file=sys.stderr)
        for r in safety["runs"]:
            for v in r["violations"]:
                print(f"  run model={r['model']} seed={r['seed']}: {json.dumps(v)}", file=sys.stderr)
        for v in plan_violations:
            print(f"  plan: {json.dumps(v, default=str)}", file=sys.stderr)
    else:
        md = min(r["min_pairwise_distance"] for r in safety["runs"])
        print(f"{len(models)} run(s), no violations; min pairwise distance {md:.2f} m "
              f"(rc {scenario.rc:g} m)")
    return code


# -- plot --------------------------------------------------------------------------


def _xy_range(grid):
    return (grid.mins[0], grid.maxs[0]), (grid.mins[1], grid.maxs[1])


def _draw_static(canvas, scenario):
    from hjspp.gridcore import Field, zero_contours

    f = scenario.static_obstacles
    if f is None:
        return
    plane = Field(f.grid.drop_axis(2), f.values[..., 0])
    for line in zero_contours(plane):
        canvas.polyline(line, stroke="#555", width=1.0, cls="obstacle")


def plot_trajectories(run_dir, out, trace_csv=None):
    from hjspp.svgplot import PALETTE, Canvas

    _, scenario, mp, _ = _load_run(run_dir)
    xr, yr = _xy_range(scenario.planning_grid)
    c = Canvas(xr, yr, title="Nominal trajectories", xlabel="x (m)", ylabel="y (m)")
    _draw_static(c, scenario)
    for k, vp in enumerate(mp.vehicles):
        col = PALETTE[k % len(PALETTE)]
        c.circle(vp.spec.target_center, vp.spec.target_radius, stroke=col, cls="target", dash="4,3")
        c.polyline(vp.plan.nominal.states[:, :2], stroke=col, cls="trajectory", label=f"vehicle {vp.spec.id}")
        c.text(vp.spec.x0[:2], vp.spec.id, cls="vehicle-label")
    if trace_csv is not None:
        rows = list(csv.DictReader(open(trace_csv)))
        for k, vp in enumerate(mp.vehicles):
            pts = [(float(r["x"]), float(r["y"])) for r in rows if r["vehicle"] == vp.spec.id]
            if pts:
                c.polyline(pts, stroke=PALETTE[k % len(PALETTE)], width=0.8, cls="realized", dash="2,2")
    return c.save(out)


def plot_min_dist(run_dir, out, sim_dir=None):
    from hjspp.svgplot import Canvas

    _, scenario, _, _ = _load_run(run_dir)
    sim_dir = Path(sim_dir) if sim_dir else Path(run_dir) / "sim"
    path = sim_dir / "min_distance.csv"
    if not path.exists():
        raise InputError(f"missing {path}; run 'hjspp simulate' first")
    rows = [r for r in csv.DictReader(open(path)) if r["min_distance"]]
    if not rows:
        raise InputError(f"{path} has no time with two vehicles present")
    t = np.array([float(r["t"]) for r in rows])
    d = np.array([float(r["min_distance"]) for r in rows])
    top = max(float(d.max()), scenario.rc) * 1.1
    t1 = t[-1] if t[-1] > t[0] else t[0] + 1.0
    c = Canvas((t[0], t1), (0.0, top), equal=False, width=640, height=320,
               title="Minimum distance to other vehicles", xlabel="t (s)", ylabel="distance (m)")
    c.hline(scenario.rc)
    c.polyline(np.column_stack([t, d]), stroke="#1f77b4", cls="min_distance")
    return c.save(out)


def control_law_grid(eb, theta: float = 0.0):
    """Optimal tracking controls over the ``(ex, ey)`` slice nearest ``theta``."""
    from hjspp.dynamics import ham_eb

    g = eb.grid
    k = int(np.argmin(np.abs(np.angle(np.exp(1j * (g.axis(2) - theta))))))
    grads = [np.asarray(gr)[..., k] for gr in eb.value_gradient]
    ex, ey = np.meshgrid(g.axis(0), g.axis(1), indexing="ij")
    eth = np.full_like(ex, g.axis(2)[k])
    _, u, _, _ = ham_eb((ex, ey, eth), grads, eb.tracker, eb.reduced)
    inside = eb.omega_field.values[..., k] < 0
    return g.axis(0), g.axis(1), np.asarray(u.v), np.asarray(u.omega), inside, g.axis(2)[k]


def plot_control_law(run_dir, out, vehicle=None, panel="omega"):
    from hjspp.gridcore import Field, zero_contours
    from hjspp.svgplot import Canvas

    _, scenario, mp, _ = _load_run(run_dir)
    vp = mp.by_id(vehicle) if vehicle else mp.vehicles[0]
    xs, ys, v, w, inside, th = control_law_grid(vp.error_bound)
    if panel == "omega":
        colors = [["#d62728" if w[i, j] > 0 else ("#ffffff" if w[i, j] < 0 else "#bbbbbb")
                   for j in range(len(ys))] for i in range(len(xs))]
        title = "Turn rate: red turn left, white turn right"
    else:
        t = vp.error_bound.tracker
        colors = [["#1f77b4" if v[i, j] >= t.v_max else ("#ffffff" if v[i, j] <= t.v_min else "#bbbbbb")
                   for j in range(len(ys))] for i in range(len(xs))]
        title = "Speed: blue full speed, white slowest"
    c = Canvas((xs[0], xs[-1]), (ys[0], ys[-1]), width=480, height=480, title=title,
               xlabel="ex (m)", ylabel="ey (m)")
    c.cells(xs, ys, colors)
    g = vp.error_bound.grid.drop_axis(2)
    k = int(np.argmin(np.abs(vp.error_bound.grid.axis(2) - th)))
    for line in zero_contours(Field(g, vp.error_bound.omega_field.values[..., k])):
        c.polyline(line, stroke="black", cls="omega_boundary")
    return c.save(out)


def plot_brs_slice(run_dir, out, vehicle=None, t=None, theta=0.0):
    from hjspp.gridcore import Field, zero_contours
    from hjspp.rtt import PlanOptions, augment_obstacles, plan_nominal, shrink_target, total_obstacles
    from hjspp.svgplot import Canvas

    _, scenario, mp, _ = _load_run(run_dir)
    idx = 0
    if vehicle is not None:
        ids = [vp.spec.id for vp in mp.vehicles]
        if vehicle not in ids:
            raise InputError(f"vehicle {vehicle!r} is not in the run")
        idx = ids.index(vehicle)
    vp = mp.vehicles[idx]
    total = total_obstacles(scenario.static_obstacles, [p.induced for p in mp.vehicles[:idx]])
    augmented = augment_obstacles(total, vp.radius_pos)
    shrunk = shrink_target(scenario.target_field(vp.spec), vp.radius_pos)
    opts = scenario.plan_options
    opts = PlanOptions(opts.solver, opts.dt_traj, opts.horizon, keep_brs=True)
    plan = plan_nominal(np.asarray(vp.spec.x0, dtype=float), vp.spec.sta, shrunk, augmented,
                        vp.spec.reduced, scenario.planning_grid, opts)
    series = plan.brs_series
    t = plan.ldt if t is None else float(t)
    values = series.at(t)
    g = scenario.planning_grid
    k = int(np.argmin(np.abs(np.angle(np.exp(1j * (g.axis(2) - theta))))))
    xr, yr = _xy_range(g)
    c = Canvas(xr, yr, title=f"BRS of vehicle {vp.spec.id} at t={t:.2f} s, theta={g.axis(2)[k]:.2f}",
               xlabel="x (m)", ylabel="y (m)")
    _draw_static(c, scenario)
    plane_grid = g.drop_axis(2)
    for line in zero_contours(Field(plane_grid, values[..., k])):
        c.polyline(line, stroke="#d62728", cls="brs")
    for p in mp.vehicles[:idx]:
        if p.induced.active(t):
            ctr = p.induced.center_at(t)
            c.circle(ctr, p.induced.radius, stroke="#555", cls="induced_obstacle")
    c.circle(vp.spec.target_center, vp.spec.target_radius, stroke="#1f77b4", cls="target", dash="4,3")
    c.circle(vp.spec.x0[:2], 4.0, stroke="black", fill="black", cls="start")
    return c.save(out)


def cmd_plot(args) -> int:
    what = args.what
    out = Path(args.out)
    if what == "trajectories":
        trace = Path(args.run_dir) / "sim" / "trace.csv"
        plot_trajectories(args.run_dir, out, trace if trace.exists() else None)
    elif what == "min_dist":
        plot_min_dist(args.run_dir, out, args.sim_dir)
    elif what == "control_law":
        plot_control_law(args.run_dir, out, args.vehicle, args.panel)
    else:
        plot_brs_slice(args.run_dir, out, args.vehicle, args.time, args.theta)
    print(f"wrote {out}")
    return EXIT_OK


# -- verify ------------------------------------------------------------------------


def cmd_verify(args) -> int:
    from hjspp import verify
    from hjspp.planner import dump_json

    suites = list(verify.SUITES) if args.suite == "all" else [args.suite]
    results = []
    for s in suites:
        res = verify.run_suite(s)
        results.append(res)
        for chk in res["checks"]:
            print(verify.Check(**chk).line())
    summary = {"passed": all(r["passed"] for r in results), "suites": results}
    if args.run_dir:
        out = Path(args.run_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(summary, out / "verify.json")
        write_manifest(out, "verify", None, {"suite": args.suite}, {},
                       {r["suite"]: r["passed"] for r in results},
                       {"exit_code": EXIT_OK if summary["passed"] else EXIT_VERIFY})
    else:
        print(json.dumps({"passed": summary["passed"],
                          "suites": {r["suite"]: r["passed"] for r in results}}))
    return EXIT_OK if summary["passed"] else EXIT_VERIFY


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hjspp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hjspp {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="plan every vehicle of a scenario")
    sp.add_argument("scenario", help="scenario JSON file or bundled preset name")
    sp.add_argument("--out", required=True, help="output run directory")
    sp.add_argument("--cfl", type=float, help="override solver.cfl_factor")
    sp.add_argument("--eb-horizon", type=float, help="override solver.eb_horizon (seconds)")
    sp.set_defaults(func=cmd_plan)

    ss = sub.add_parser("simulate", help="closed-loop simulation of a planned run")
    ss.add_argument("run_dir")
    ss.add_argument("--model", help="none | constant:dx,dy | uniform | worst (default: scenario)")
    ss.add_argument("--seed", type=int, help="random seed (default: scenario)")
    ss.add_argument("--runs", type=int, default=1, help="number of runs, seeds seed..seed+runs-1")
    ss.add_argument("--dt-sim", type=float, help="simulation step (default: trajectory step / 5)")
    ss.add_argument("--out", help="output directory (default: RUN_DIR/sim)")
    ss.set_defaults(func=cmd_simulate)

    sl = sub.add_parser("plot", help="render an SVG figure of a run")
    sl.add_argument("run_dir")
    sl.add_argument("what", choices=("trajectories", "min_dist", "control_law", "brs_slice"))
    sl.add_argument("--out", required=True, help="output SVG path")
    sl.add_argument("--vehicle", help="vehicle id (control_law, brs_slice)")
    sl.add_argument("--panel", choices=("omega", "v"), default="omega", help="control_law panel")
    sl.add_argument("--time", type=float, help="brs_slice time (default: the vehicle's ldt)")
    sl.add_argument("--theta", type=float, default=0.0, help="brs_slice heading (rad)")
    sl.add_argument("--sim-dir", help="simulation directory for min_dist (default: RUN_DIR/sim)")
    sl.set_defaults(func=cmd_plot)

    sv = sub.add_parser("verify", help="run the built-in verification suites")
    sv.add_argument("run_dir", nargs="?", help="directory for verify.json (default: print only)")
    sv.add_argument("--suite", choices=("analytic", "oracle", "invariants", "all"), default="all")
    sv.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
