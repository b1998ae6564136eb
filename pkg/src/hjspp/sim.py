"""Closed-loop simulation of a multi-vehicle plan under bounded disturbances.

Each vehicle departs from its start state at its latest departure time, tracks
its nominal trajectory with the feedback law read from its error-bound value
function, and is integrated with RK4 holding control and disturbance over
each step of length ``dt_sim``. After its nominal trajectory ends the vehicle
parks where it is until ``sta`` (or forever with ``occupy_after_arrival``).

Many runs (e.g. one per random seed) are advanced together as a batch; the
batch axis comes first in every array of a :class:`SimTrace`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from hjspp.dynamics import ControlInput, ErrorState, dubins_rk4, ham_eb, relative_pose, rotate
from hjspp.gridcore import gradient_values_at, interpolate
from hjspp.planner import MultiPlan, Scenario, presence_window
from hjspp.rtt import ErrorBoundResult

KINDS = ("none", "constant", "uniform", "worst_case")


@dataclass(frozen=True)
class DisturbanceModel:
    """How the disturbance is realised; ``vector`` is used by ``constant`` only (world frame)."""

    kind: str
    d_max: float
    vector: tuple[float, float] = (0.0, 0.0)
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}; expected one of {KINDS}")
        if self.d_max < 0:
            raise ValueError("d_max must be non-negative")
        if self.kind == "constant" and np.hypot(*self.vector) > self.d_max * (1 + 1e-12):
            raise ValueError(f"constant disturbance {self.vector} exceeds d_max={self.d_max}")


def tracking_control(e, eb: ErrorBoundResult, tracker=None):
    """Feedback law: the control maximising ``grad V . f`` at error ``e``.

    ``e`` may be one error state or an ``(n, 3)`` batch. Errors outside the
    error grid are clamped onto it. Returns ``(ControlInput, outside)`` where
    ``outside`` flags the clamped entries.
    """
    tracker = eb.tracker if tracker is None else tracker
    e = np.asarray(e, dtype=float)
    single = e.ndim == 1
    pts, outside = _clamp_to_grid(np.atleast_2d(e), eb)
    p = gradient_values_at(eb.grid, eb.value.values, pts)
    _, u, _, _ = ham_eb(pts.T, p.T, tracker, eb.reduced)
    if single:
        return ControlInput(float(u.v[0]), float(u.omega[0])), bool(outside[0])
    return u, outside


def _clamp_to_grid(e: np.ndarray, eb: ErrorBoundResult):
    g = eb.grid
    pts = e.copy()
    pts[:, 2] = (pts[:, 2] + np.pi) % (2 * np.pi) - np.pi
    lo = np.asarray(g.mins[:2])
    hi = np.asarray(g.maxs[:2])
    outside = np.any((pts[:, :2] < lo) | (pts[:, :2] > hi), axis=1)
    pts[:, :2] = np.clip(pts[:, :2], lo, hi)
    return pts, outside


def _worst_disturbance(pts: np.ndarray, eb: ErrorBoundResult) -> np.ndarray:
    """Error-frame disturbance minimising ``grad V . f`` (zero where the position costate vanishes)."""
    p = gradient_values_at(eb.grid, eb.value.values, pts)
    norm = np.hypot(p[:, 0], p[:, 1])
    safe = np.where(norm > 0, norm, 1.0)
    scale = np.where(norm > 0, -eb.tracker.d_max / safe, 0.0)
    return p[:, :2] * scale[:, None]


def realize_disturbance(model: DisturbanceModel, t: float, e, eb: ErrorBoundResult,
                        theta_ref=0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """World-frame disturbance for one vehicle (or an ``(n, 3)`` batch of errors).

    ``theta_ref`` is the nominal heading, needed to rotate the error-frame
    worst case into the world frame. ``rng`` drives ``uniform``; by default a
    generator seeded with ``model.seed``.
    """
    e = np.atleast_2d(np.asarray(e, dtype=float))
    n = len(e)
    if model.kind == "none":
        d = np.zeros((n, 2))
    elif model.kind == "constant":
        d = np.tile(np.asarray(model.vector, dtype=float), (n, 1))
    elif model.kind == "uniform":
        rng = np.random.default_rng(model.seed) if rng is None else rng
        d = _uniform_disc(rng, n, model.d_max)
    else:
        pts, _ = _clamp_to_grid(e, eb)
        d = rotate(_worst_disturbance(pts, eb).T, np.broadcast_to(theta_ref, (n,))).T
    return d[0] if np.ndim(theta_ref) == 0 and n == 1 else d


def _uniform_disc(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    r = radius * np.sqrt(rng.random(n))
    a = 2 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


@dataclass(eq=False)
class SimTrace:
    """Batch of closed-loop runs.

    Per-step arrays have shape ``(runs, steps, vehicles, ...)`` and are only
    present when recorded; metrics are always present.
    """

    times: np.ndarray
    vehicle_ids: list[str]
    models: list[DisturbanceModel]
    true_states: np.ndarray | None
    nominal_states: np.ndarray | None
    errors: np.ndarray | None
    controls: np.ndarray | None
    disturbances: np.ndarray | None
    present: np.ndarray
    min_distance_series: np.ndarray
    metrics: dict = field(default_factory=dict)


def _static_values(scenario: Scenario, xy: np.ndarray) -> np.ndarray:
    f = scenario.static_obstacles
    pts = np.column_stack([xy, np.zeros(len(xy))])
    g = f.grid
    pts[:, 0] = np.clip(pts[:, 0], g.mins[0], g.maxs[0])
    pts[:, 1] = np.clip(pts[:, 1], g.mins[1], g.maxs[1])
    return interpolate(f, pts)


def simulate(
    mp: MultiPlan,
    scenario: Scenario,
    models,
    dt_sim: float | None = None,
    record: bool = True,
) -> SimTrace:
    """Run every disturbance model in ``models`` (one model or a list) on the plan.

    Random models draw from one generator per run, seeded with the model's
    seed, so a run is reproducible on its own regardless of the batch.
    """
    if isinstance(models, DisturbanceModel):
        models = [models]
    models = list(models)
    vps = mp.vehicles
    if not vps:
        raise ValueError("nothing to simulate: the plan has no vehicles")
    spec_ids = {v.id for v in scenario.vehicles}
    for vp in vps:
        if vp.spec.id not in spec_ids:
            raise ValueError(f"plan vehicle {vp.spec.id} is not in the scenario")
    dt_traj = min(vp.plan.dt_traj for vp in vps if np.isfinite(vp.plan.dt_traj)) if any(
        np.isfinite(vp.plan.dt_traj) for vp in vps) else 0.05
    dt = dt_traj / 5 if dt_sim is None else float(dt_sim)
    if dt <= 0:
        raise ValueError("dt_sim must be positive")
    if dt > dt_traj * (1 + 1e-9):
        raise ValueError(f"dt_sim={dt} exceeds the trajectory step {dt_traj}")

    n_runs, n_veh = len(models), len(vps)
    ldt = np.array([vp.plan.ldt for vp in vps])
    arrival = np.array([vp.plan.arrival for vp in vps])
    windows = [presence_window(vp, scenario.occupy_after_arrival) for vp in vps]
    w_end = np.array([w[1] for w in windows])
    t0 = float(ldt.min())
    t1 = float(max(arrival.max(), np.max(np.where(np.isfinite(w_end), w_end, arrival))))
    n_steps = int(np.ceil((t1 - t0) / dt - 1e-9))
    times = t0 + dt * np.arange(n_steps + 1)

    rngs = [np.random.default_rng(m.seed) for m in models]
    x = np.empty((n_runs, n_veh, 3))
    for j, vp in enumerate(vps):
        x[:, j] = np.asarray(vp.spec.x0, dtype=float)

    shape = (n_runs, n_steps + 1, n_veh)
    rec = {}
    if record:
        rec = {k: np.full(shape + (c,), np.nan) for k, c in
               (("x", 3), ("xr", 3), ("e", 3), ("u", 2), ("d", 2))}
    present_mask = np.zeros((n_steps + 1, n_veh), dtype=bool)
    min_dist = np.full((n_runs, n_steps + 1), np.inf)
    max_err = np.zeros((n_runs, n_veh))
    omega_exit = np.zeros((n_runs, n_veh), dtype=bool)
    grid_exit = np.zeros((n_runs, n_veh), dtype=bool)
    static_min = np.full((n_runs, n_veh), np.inf)
    arrive_dist = np.full((n_runs, n_veh), np.nan)

    d_max = np.array([vp.spec.tracker.d_max for vp in vps])
    const = np.array([m.vector if m.kind == "constant" else (0.0, 0.0) for m in models], dtype=float)
    kinds = [m.kind for m in models]
    worst = [r for r, kind in enumerate(kinds) if kind == "worst_case"]

    for k in range(n_steps + 1):
        t = times[k]
        t_next = t + dt
        present = np.array([w[0] <= t <= w[1] for w in windows])
        present_mask[k] = present
        u_all = np.zeros((n_runs, n_veh, 2))
        d_all = np.zeros((n_runs, n_veh, 2))
        h_all = np.zeros(n_veh)
        for j, vp in enumerate(vps):
            # the vehicle moves on [ts, te] within this step: after departure, before arrival
            ts = max(t, ldt[j])
            te = min(t_next, arrival[j])
            flying = k < n_steps and te - ts > 1e-12
            if not (present[j] or flying):
                continue
            xr = vp.plan.nominal.state_at(min(ts, arrival[j]))
            e = np.column_stack(relative_pose(x[:, j].T, xr))
            eb = vp.error_bound
            if present[j]:
                en = np.hypot(e[:, 0], e[:, 1])
                max_err[:, j] = np.maximum(max_err[:, j], en)
                pts, out = _clamp_to_grid(e, eb)
                grid_exit[:, j] |= out
                omega_exit[:, j] |= interpolate(eb.omega_field, pts) >= 0
                if scenario.static_obstacles is not None:
                    static_min[:, j] = np.minimum(static_min[:, j],
                                                  _static_values(scenario, x[:, j, :2]))
                if record:
                    rec["x"][:, k, j] = x[:, j]
                    rec["xr"][:, k, j] = xr
                    rec["e"][:, k, j] = e
            if flying:
                u, _ = tracking_control(e, eb)
                u_all[:, j] = np.column_stack([u.v, u.omega])
                for r, kind in enumerate(kinds):
                    if kind == "uniform":
                        d_all[r, j] = _uniform_disc(rngs[r], 1, d_max[j])[0]
                    elif kind == "constant":
                        d_all[r, j] = const[r]
                if worst:
                    pts, _ = _clamp_to_grid(e[worst], eb)
                    d_all[worst, j] = rotate(_worst_disturbance(pts, eb).T, xr[2]).T
                h_all[j] = te - ts
                if record and present[j]:
                    rec["u"][:, k, j] = u_all[:, j]
                    rec["d"][:, k, j] = d_all[:, j]
        idx = np.flatnonzero(present)
        if len(idx) > 1:
            p = x[:, idx, :2]
            diff = p[:, :, None, :] - p[:, None, :, :]
            dist = np.hypot(diff[..., 0], diff[..., 1])
            iu = np.triu_indices(len(idx), 1)
            min_dist[:, k] = dist[:, iu[0], iu[1]].min(axis=1)
        for j in np.flatnonzero(h_all > 0):
            x[:, j] = dubins_rk4(x[:, j].T, u_all[:, j].T, d_all[:, j].T, h_all[j]).T
            if t_next >= arrival[j] - 1e-12:
                c = np.asarray(vps[j].spec.target_center)
                arrive_dist[:, j] = np.hypot(*(x[:, j, :2] - c).T)

    for j, vp in enumerate(vps):
        if np.all(np.isnan(arrive_dist[:, j])):
            c = np.asarray(vp.spec.target_center)
            arrive_dist[:, j] = np.hypot(*(x[:, j, :2] - c).T)

    metrics = {
        "min_pairwise_distance": min_dist.min(axis=1),
        "max_error_norm": max_err,
        "radius_pos": np.array([vp.radius_pos for vp in vps]),
        "omega_exit": omega_exit,
        "error_grid_exit": grid_exit,
        "static_min_value": static_min,
        "arrival_time": arrival,
        "sta": np.array([vp.plan.sta for vp in vps]),
        "arrival_distance": arrive_dist,
        "target_radius": np.array([vp.spec.target_radius for vp in vps]),
    }
    return SimTrace(
        times=times,
        vehicle_ids=[vp.spec.id for vp in vps],
        models=models,
        true_states=rec.get("x"),
        nominal_states=rec.get("xr"),
        errors=rec.get("e"),
        controls=rec.get("u"),
        disturbances=rec.get("d"),
        present=present_mask,
        min_distance_series=min_dist,
        metrics=metrics,
    )


def safety_report(trace: SimTrace, scenario: Scenario) -> dict:
    """Violations per run: separation below ``rc``, static-obstacle entry,
    error leaving ``Omega`` or the error grid, error norm above ``radius_pos``,
    and arrival outside the target or after ``sta``."""
    m = trace.metrics
    ids = trace.vehicle_ids
    runs = []
    for r, model in enumerate(trace.models):
        v = []
        md = float(m["min_pairwise_distance"][r])
        if md < scenario.rc:
            k = int(np.argmin(trace.min_distance_series[r]))
            v.append({"type": "separation", "t": float(trace.times[k]), "distance": md})
        for j, vid in enumerate(ids):
            if m["static_min_value"][r, j] <= 0:
                v.append({"type": "static_obstacle", "vehicle": vid,
                          "value": float(m["static_min_value"][r, j])})
            if m["omega_exit"][r, j]:
                v.append({"type": "omega_exit", "vehicle": vid})
            if m["error_grid_exit"][r, j]:
                v.append({"type": "error_grid_exit", "vehicle": vid})
            if m["max_error_norm"][r, j] > m["radius_pos"][j]:
                v.append({"type": "error_bound", "vehicle": vid,
                          "max_error": float(m["max_error_norm"][r, j]),
                          "radius_pos": float(m["radius_pos"][j])})
            if m["arrival_time"][j] > m["sta"][j] + 1e-9 or \
                    m["arrival_distance"][r, j] > m["target_radius"][j]:
                v.append({"type": "arrival", "vehicle": vid,
                          "arrival": float(m["arrival_time"][j]),
                          "distance": float(m["arrival_distance"][r, j])})
        runs.append({
            "model": model.kind,
            "seed": model.seed,
            "min_pairwise_distance": md,
            "max_error_norm": {vid: float(m["max_error_norm"][r, j]) for j, vid in enumerate(ids)},
            "violations": v,
        })
    return {
        "rc": scenario.rc,
        "runs": runs,
        "violation_count": sum(len(r["violations"]) for r in runs),
        "min_distance_series_length": int(trace.min_distance_series.shape[1]),
    }


def write_trace_csv(trace: SimTrace, path, run: int = 0) -> None:
    """``t,vehicle,x,y,theta,xr,yr,thetar,ex,ey,etheta,v,omega,dx,dy`` for one run of the batch."""
    if trace.true_states is None:
        raise ValueError("trace was simulated with record=False")
    cols = ["t", "vehicle", "x", "y", "theta", "xr", "yr", "thetar",
            "ex", "ey", "etheta", "v", "omega", "dx", "dy"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for k, t in enumerate(trace.times):
            for j, vid in enumerate(trace.vehicle_ids):
                if not trace.present[k, j]:
                    continue
                row = np.concatenate([
                    trace.true_states[run, k, j], trace.nominal_states[run, k, j],
                    trace.errors[run, k, j], np.nan_to_num(trace.controls[run, k, j]),
                    np.nan_to_num(trace.disturbances[run, k, j]),
                ])
                w.writerow([repr(float(t)), vid] + [repr(float(z)) for z in row])


def error_state(x, x_ref) -> ErrorState:
    """Tracking error of a true state relative to its nominal (relative-pose construction)."""
    return relative_pose(x, x_ref)


__all__ = [
    "DisturbanceModel", "SimTrace", "tracking_control", "realize_disturbance",
    "simulate", "safety_report", "write_trace_csv", "error_state",
]
