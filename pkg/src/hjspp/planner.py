"""Sequential path planning over a priority-ordered list of vehicles.

Vehicle ``i`` plans against the static obstacles and the moving obstacles
induced by vehicles ``0..i-1`` only, so a vehicle's plan never depends on
anything of lower priority. Error bounds are shared between vehicles whose
tracker bounds, reduced bounds and ``R_EB`` agree.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hjspp.dynamics import DubinsBounds, VehicleState
from hjspp.gridcore import Field, Grid, disc_field, interpolate, read_field_csv, write_field_csv
from hjspp.hjsolver import SolveOptions, solve_counts
from hjspp.rtt import (
    DiscSequence,
    ErrorBoundResult,
    NominalTrajectory,
    PlanOptions,
    PlanResult,
    augment_obstacles,
    compute_error_bound,
    disc_sequence_from_dict,
    disc_sequence_to_dict,
    induce_obstacles,
    plan_nominal,
    position_radius,
    read_nominal_csv,
    shrink_target,
    total_obstacles,
    write_nominal_csv,
    write_obstacle_frames,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VehicleSpec:
    id: str
    x0: VehicleState
    target_center: tuple[float, float]
    target_radius: float
    sta: float
    tracker: DubinsBounds
    reduced: DubinsBounds
    R_EB: float

    def __post_init__(self):
        if self.target_radius <= 0:
            raise ValueError(f"vehicle {self.id}: target_radius must be positive")
        if self.R_EB <= 0:
            raise ValueError(f"vehicle {self.id}: R_EB must be positive")

    @property
    def eb_key(self) -> tuple:
        return (self.tracker, self.reduced, float(self.R_EB))


@dataclass
class Scenario:
    """Everything the planner needs; vehicles are listed in priority order.

    ``eb_horizon`` (seconds) opts into finite-horizon tracking-error sets,
    used when the infinite-horizon iteration cannot converge; such sets have
    no invariance certificate and the closed-loop simulation is the check.
    """

    planning_grid: Grid
    error_grid: Grid
    vehicles: list[VehicleSpec]
    rc: float
    static_obstacles: Field | None = None
    eb_solver: SolveOptions = SolveOptions()
    eb_horizon: float | None = None
    plan_options: PlanOptions = PlanOptions()
    occupy_after_arrival: bool = False
    sim: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rc < 0:
            raise ValueError("rc must be non-negative")
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle ids must be unique")
        g = self.planning_grid
        if g.ndim != 3 or not g.periodic[2]:
            raise ValueError("planning grid must be (x, y, theta) with theta periodic")
        if self.static_obstacles is not None and self.static_obstacles.grid != g:
            raise ValueError("static obstacle field is not on the planning grid")
        for v in self.vehicles:
            if not g.contains(np.asarray(v.x0, dtype=float)):
                raise ValueError(f"vehicle {v.id}: start outside the planning grid")
            if not g.contains(v.target_center, axes=(0, 1)):
                raise ValueError(f"vehicle {v.id}: target centre outside the planning grid")
            if self.static_obstacles is not None:
                if interpolate(self.static_obstacles, np.asarray(v.x0, dtype=float)) <= 0:
                    raise ValueError(f"vehicle {v.id}: start inside a static obstacle")

    def target_field(self, v: VehicleSpec) -> Field:
        return disc_field(self.planning_grid, v.target_center, v.target_radius)


@dataclass(eq=False)
class VehiclePlan:
    spec: VehicleSpec
    error_bound: ErrorBoundResult
    plan: PlanResult
    induced: DiscSequence
    timings: dict = field(default_factory=dict)

    @property
    def radius_pos(self) -> float:
        return self.error_bound.radius_pos


@dataclass(eq=False)
class MultiPlan:
    vehicles: list[VehiclePlan]
    failure: dict | None = None
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failure is None

    def by_id(self, vid: str) -> VehiclePlan:
        for vp in self.vehicles:
            if vp.spec.id == vid:
                return vp
        raise KeyError(vid)

    def report(self) -> dict:
        return {
            "ok": self.ok,
            "failure": self.failure,
            "stats": self.stats,
            "vehicles": [
                {
                    "id": vp.spec.id,
                    "ldt": vp.plan.ldt,
                    "arrival": vp.plan.arrival,
                    "sta": vp.plan.sta,
                    "radius_pos": vp.radius_pos,
                    "eb_converged": vp.error_bound.converged,
                    "eb_horizon": vp.error_bound.horizon,
                    "eb_residual": vp.error_bound.residual,
                    "eb_steps": vp.error_bound.steps,
                    "plan_steps": vp.plan.solve_steps,
                    "dt_traj": vp.plan.dt_traj,
                    "timings": vp.timings,
                }
                for vp in self.vehicles
            ],
        }


class ErrorBoundCache(dict):
    """``(eb_key, eb_horizon) -> ErrorBoundResult``; may be shared across :func:`plan_all` calls
    on the same error grid."""


def plan_all(
    scenario: Scenario,
    keep_brs: bool = False,
    eb_cache: ErrorBoundCache | None = None,
) -> MultiPlan:
    """Plan every vehicle in priority order.

    Stops at the first vehicle that fails; its id, stage and message are in
    ``failure`` and the plans of the vehicles before it are kept.
    ``stats`` counts the solver calls made by this invocation.
    """
    cache = ErrorBoundCache() if eb_cache is None else eb_cache
    counts0 = dict(solve_counts)
    opts = scenario.plan_options
    if opts.keep_brs != keep_brs:
        opts = PlanOptions(opts.solver, opts.dt_traj, opts.horizon, keep_brs)
    done: list[VehiclePlan] = []
    failure = None
    for spec in scenario.vehicles:
        stage = "error_bound"
        timings = {}
        try:
            t0 = time.perf_counter()
            key = (spec.eb_key, scenario.eb_horizon)
            eb = cache.get(key)
            if eb is None:
                eb = compute_error_bound(spec.tracker, spec.reduced, spec.R_EB,
                                         scenario.error_grid, scenario.eb_solver,
                                         horizon=scenario.eb_horizon)
                if eb.horizon is not None:
                    log.warning("vehicle %s: using the %.3g s finite-horizon error bound",
                                spec.id, eb.horizon)
                elif not eb.converged:
                    raise RuntimeError(
                        f"error bound did not converge in {eb.steps} steps "
                        f"(residual {eb.residual:.3g})"
                    )
                cache[key] = eb
            timings["error_bound"] = time.perf_counter() - t0
            stage = "target"
            if spec.target_radius <= eb.radius_pos:
                raise ValueError(
                    f"target radius {spec.target_radius} does not exceed radius_pos {eb.radius_pos:.3f}"
                )
            shrunk = shrink_target(scenario.target_field(spec), eb.radius_pos)
            stage = "plan"
            t0 = time.perf_counter()
            total = total_obstacles(scenario.static_obstacles, [vp.induced for vp in done])
            augmented = augment_obstacles(total, eb.radius_pos)
            plan = plan_nominal(np.asarray(spec.x0, dtype=float), spec.sta, shrunk, augmented,
                                spec.reduced, scenario.planning_grid, opts)
            timings["plan"] = time.perf_counter() - t0
            stage = "induce"
            induced = induce_obstacles(plan, eb.radius_pos, scenario.rc, scenario.planning_grid,
                                       scenario.occupy_after_arrival)
        except Exception as exc:  # noqa: BLE001 - reported with stage, never swallowed silently
            log.error("vehicle %s failed at stage %s: %s", spec.id, stage, exc)
            failure = {"vehicle": spec.id, "stage": stage, "error": type(exc).__name__,
                       "message": str(exc)}
            break
        done.append(VehiclePlan(spec, eb, plan, induced, timings))
    stats = {k: solve_counts[k] - counts0.get(k, 0) for k in ("solve_hjvi", "converge_invariant")}
    stats = {"planning_solves": stats["solve_hjvi"], "error_bound_solves": stats["converge_invariant"]}
    return MultiPlan(done, failure, stats)


# -- validation ------------------------------------------------------------------


def presence_window(vp: VehiclePlan, occupy_after_arrival: bool = False) -> tuple[float, float]:
    """Times during which a vehicle is airborne or parked at its last nominal point."""
    end = np.inf if occupy_after_arrival else max(vp.plan.sta, vp.plan.arrival)
    return vp.plan.ldt, end


def _common_lattice(plans: list[VehiclePlan]) -> np.ndarray:
    return np.unique(np.concatenate([vp.plan.nominal.times for vp in plans]))


def _nominal_positions(vp: VehiclePlan, times: np.ndarray) -> np.ndarray:
    nom = vp.plan.nominal
    return np.column_stack([np.interp(times, nom.times, nom.states[:, i]) for i in (0, 1)])


def validate_plan(mp: MultiPlan, scenario: Scenario, rc: float | None = None) -> dict:
    """Static checks of a finished plan, one pass/fail entry per check per vehicle.

    Checks: nominal clearance from static obstacles (by at least the
    vehicle's ``radius_pos``), pairwise nominal separation of at least
    ``rc + radius_pos_i + radius_pos_j`` on the common time lattice, arrival
    by ``sta`` and controls within the reduced bounds.
    """
    rc = scenario.rc if rc is None else rc
    vehicles = mp.vehicles
    checks: dict[str, dict] = {vp.spec.id: {} for vp in vehicles}
    for vp in vehicles:
        c = checks[vp.spec.id]
        nom = vp.plan.nominal
        if scenario.static_obstacles is not None:
            vals = interpolate(scenario.static_obstacles, nom.states)
            margin = float(np.min(vals) - vp.radius_pos)
        else:
            margin = np.inf
        c["obstacle_clearance"] = {"pass": bool(margin > 0), "margin": margin}
        c["arrival"] = {"pass": bool(vp.plan.arrival <= vp.plan.sta + 1e-9),
                        "arrival": vp.plan.arrival, "sta": vp.plan.sta}
        u = nom.controls[:-1] if len(nom) > 1 else nom.controls[:0]
        ok = vp.spec.reduced.contains((u[:, 0], u[:, 1])) if len(u) else True
        c["controls"] = {"pass": bool(ok)}
        c["separation"] = {"pass": True, "min_margin": np.inf, "worst_pair": None}
    if len(vehicles) > 1:
        lattice = _common_lattice(vehicles)
        pos = {vp.spec.id: _nominal_positions(vp, lattice) for vp in vehicles}
        for i, a in enumerate(vehicles):
            wa = presence_window(a, scenario.occupy_after_arrival)
            for b in vehicles[i + 1:]:
                wb = presence_window(b, scenario.occupy_after_arrival)
                both = (lattice >= max(wa[0], wb[0])) & (lattice <= min(wa[1], wb[1]))
                if not both.any():
                    continue
                d = np.hypot(*(pos[a.spec.id][both] - pos[b.spec.id][both]).T)
                margin = float(d.min() - (rc + a.radius_pos + b.radius_pos))
                for x, y in ((a, b), (b, a)):
                    s = checks[x.spec.id]["separation"]
                    if margin < s["min_margin"]:
                        s["min_margin"] = margin
                        s["worst_pair"] = y.spec.id
                    s["pass"] = bool(s["pass"] and margin >= 0)
    passed = all(ch["pass"] for c in checks.values() for ch in c.values())
    return {"pass": passed, "rc": rc, "vehicles": checks}


# -- run directory -----------------------------------------------------------------


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def dump_json(obj, path) -> None:
    """Write JSON atomically (temp file + rename); infinities become ``null``."""

    def clean(o):
        if isinstance(o, dict):
            return {k: clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [clean(v) for v in o]
        if isinstance(o, float) and not np.isfinite(o):
            return None
        return o

    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(clean(obj), indent=2, default=_json_default))
    tmp.replace(path)


def write_run(out_dir, mp: MultiPlan, scenario_doc: dict | None = None, validation: dict | None = None,
              frame_dt: float = 1.0) -> None:
    """Serialise a plan: nominal CSVs, obstacle frames, error bounds and ``report.json``.

    Obstacle frames are sampled every ``frame_dt`` seconds over each
    vehicle's presence window; the exact disc parameters are stored alongside
    in ``discs.json``.
    """
    out = Path(out_dir)
    (out / "plans").mkdir(parents=True, exist_ok=True)
    if scenario_doc is not None:
        dump_json(scenario_doc, out / "scenario.json")
    eb_files = {}
    for vp in mp.vehicles:
        write_nominal_csv(out / "plans" / f"vehicle_{vp.spec.id}.csv", {vp.spec.id: vp.plan})
        seq = vp.induced
        end = seq.t_off if np.isfinite(seq.t_off) else seq.times[-1]
        times = np.arange(seq.t_on, end + 1e-9, frame_dt)
        if len(times) == 0 or times[-1] < end - 1e-9:
            times = np.append(times, end)
        odir = out / "obstacles" / vp.spec.id
        write_obstacle_frames(seq, odir, times)
        dump_json(disc_sequence_to_dict(seq), odir / "discs.json")
        key = id(vp.error_bound)
        if key not in eb_files:
            name = f"error_bounds/eb_{len(eb_files)}.csv"
            (out / "error_bounds").mkdir(exist_ok=True)
            write_field_csv(vp.error_bound.value, out / name)
            eb_files[key] = name
    report = mp.report()
    for entry, vp in zip(report["vehicles"], mp.vehicles):
        entry["error_bound_file"] = eb_files[id(vp.error_bound)]
        entry["plan_file"] = f"plans/vehicle_{vp.spec.id}.csv"
        entry["x0"] = list(vp.spec.x0)
        entry["t_off"] = vp.induced.t_off
    if validation is not None:
        report["validation"] = validation
    dump_json(report, out / "report.json")


def read_run(run_dir, scenario: Scenario) -> MultiPlan:
    """Rebuild a :class:`MultiPlan` (without value series) from :func:`write_run` output."""
    run = Path(run_dir)
    report = json.loads((run / "report.json").read_text())
    specs = {v.id: v for v in scenario.vehicles}
    ebs: dict[str, ErrorBoundResult] = {}
    vehicles = []
    for entry in report["vehicles"]:
        spec = specs.get(entry["id"])
        if spec is None:
            raise ValueError(f"run vehicle {entry['id']} is not in the scenario")
        fname = entry["error_bound_file"]
        if fname not in ebs:
            value = read_field_csv(run / fname, scenario.error_grid)
            omega = Field(value.grid, -value.values)
            ebs[fname] = ErrorBoundResult(
                omega_field=omega, value=value, radius_pos=position_radius(omega),
                converged=bool(entry["eb_converged"]), tracker=spec.tracker,
                reduced=spec.reduced, R_EB=spec.R_EB, horizon=entry.get("eb_horizon"),
            )
        eb = ebs[fname]
        noms = read_nominal_csv(run / entry["plan_file"])
        nominal: NominalTrajectory = noms[spec.id]
        plan = PlanResult(nominal=nominal, ldt=entry["ldt"], sta=entry["sta"],
                          arrival=entry["arrival"], dt_traj=entry["dt_traj"])
        discs = json.loads((run / "obstacles" / spec.id / "discs.json").read_text())
        induced = disc_sequence_from_dict(discs, scenario.planning_grid)
        vehicles.append(VehiclePlan(spec, eb, plan, induced))
    return MultiPlan(vehicles, report.get("failure"), report.get("stats", {}))
