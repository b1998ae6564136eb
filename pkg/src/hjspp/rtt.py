"""Robust trajectory tracking for one vehicle.

The pipeline for a vehicle is: compute the tracking-error invariant set
``Omega`` once per vehicle class, shrink the target and inflate the obstacles
by the position radius of ``Omega``, solve the planning reach-avoid problem
under the reduced control set, read off the latest departure time, roll out
the nominal trajectory, and turn that trajectory into the moving obstacle seen
by lower-priority vehicles.

Every set-valued quantity on the planning grid is represented by a field whose
sub-zero set is the set. Time-varying obstacles are "obstacle sequences":
objects with ``grid``, ``times`` and ``at(t, mode)`` returning node values
(possibly broadcastable over heading). They are evaluated lazily so that long
horizons on fine grids never materialise hundreds of full frames.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from hjspp.dynamics import (
    ControlInput,
    DubinsBounds,
    VehicleState,
    dubins_rk4,
    eb_hamiltonian,
    ham_rtt,
    rtt_hamiltonian,
)
from hjspp.gridcore import (
    EMPTY,
    Field,
    FieldSeries,
    Grid,
    GridMismatchError,
    disc_field,
    erode,
    gradient_values_at,
    interpolate,
    interpolate_values,
    set_complement,
    write_field_csv,
)
from hjspp.hjsolver import (
    SolveOptions,
    converge_invariant,
    earliest_membership,
    solve_hjvi,
)

log = logging.getLogger(__name__)

INFEASIBLE_MSG = "error bound infeasible: enlarge R_EB or reduce planning authority"


class ErrorBoundInfeasible(RuntimeError):
    pass


class UnreachableError(RuntimeError):
    pass


class ConsistencyError(RuntimeError):
    """The nominal rollout disagrees with the value function it was derived from."""


# -- error bound ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ErrorBoundResult:
    """Tracking-error invariant set for one vehicle class.

    Attributes
    ----------
    omega_field
        Field on the error grid whose sub-zero set is ``Omega``.
    value
        The converged value function ``V = -omega_field``; the tracking
        feedback maximises ``grad V . f``.
    radius_pos
        Largest position-error norm over ``Omega`` (nodes and the linearly
        interpolated boundary crossings between them).
    horizon
        ``None`` for the infinite-horizon set; otherwise the set was taken
        from the value after this many seconds of backward integration and
        carries no invariance certificate beyond that horizon.
    """

    omega_field: Field
    value: Field
    radius_pos: float
    converged: bool
    tracker: DubinsBounds
    reduced: DubinsBounds
    R_EB: float
    residual: float = float("nan")
    steps: int = 0
    dt: float = float("nan")
    horizon: float | None = None

    @property
    def value_gradient(self) -> tuple[np.ndarray, ...]:
        return self.value.gradient

    @property
    def grid(self) -> Grid:
        return self.value.grid

    def contains(self, e) -> bool:
        return bool(interpolate(self.omega_field, e) < 0.0)


def position_radius(omega: Field) -> float:
    """Largest ``hypot(ex, ey)`` over the sub-zero set of ``omega``.

    Besides the nodes, every grid edge along ``ex`` or ``ey`` with a sign
    change contributes its linearly interpolated zero crossing, so the bound
    covers the set the multilinear interpolant actually describes.
    """
    vals = omega.values
    inside = vals < 0
    if not inside.any():
        return 0.0
    ex, ey = omega.grid.mesh[0], omega.grid.mesh[1]
    r = np.broadcast_to(np.hypot(ex, ey), vals.shape)
    best = float(r[inside].max())
    for a in (0, 1):
        v0 = np.moveaxis(vals, a, 0)
        lo, hi = v0[:-1], v0[1:]
        cross = (lo < 0) != (hi < 0)
        if not cross.any():
            continue
        w = lo[cross] / (lo[cross] - hi[cross])
        coords = []
        for b in (0, 1):
            c = np.moveaxis(np.broadcast_to(omega.grid.mesh[b], vals.shape), a, 0)
            c0, c1 = c[:-1][cross], c[1:][cross]
            coords.append(c0 + w * (c1 - c0))
        best = max(best, float(np.hypot(*coords).max()))
    return best


def compute_error_bound(
    tracker: DubinsBounds,
    reduced: DubinsBounds,
    R_EB: float,
    error_grid: Grid,
    opts: SolveOptions = SolveOptions(),
    horizon: float | None = None,
) -> ErrorBoundResult:
    """Converge the tracking-error game and extract ``Omega``.

    The avoid set is ``{|(ex, ey)| >= R_EB}`` for every heading error. The
    iteration is monotone (values only decrease), so it stops as soon as no
    node is left inside ``Omega``.

    ``horizon`` (seconds) ends the iteration early and returns the
    finite-horizon set; ``converged`` then reports whether the residual test
    happened to pass first.

    Raises
    ------
    ErrorBoundInfeasible
        If ``Omega`` is empty or excludes the zero error state, or the
        reduced bounds leave the tracker no margin.
    """
    if not reduced.strictly_inside(tracker):
        raise ErrorBoundInfeasible(INFEASIBLE_MSG + " (the reduced control set must lie strictly "
                                   "inside the tracker's)")
    if R_EB <= 0:
        raise ValueError("R_EB must be positive")
    if error_grid.ndim != 3 or not error_grid.periodic[2] or any(error_grid.periodic[:2]):
        raise ValueError("error grid must be (ex, ey, etheta) with only etheta periodic")
    for a in (0, 1):
        if error_grid.mins[a] > -R_EB or error_grid.maxs[a] < R_EB:
            raise ValueError(f"error grid axis {a} must span [-R_EB, R_EB]")
    l = set_complement(disc_field(error_grid, (0.0, 0.0), R_EB))
    res = converge_invariant(
        error_grid, l, eb_hamiltonian(tracker, reduced), opts,
        stop_when=lambda t, v: v.max() <= 0.0, horizon=horizon,
    )
    value = res.series.frames[-1]
    omega = set_complement(value)
    if res.stopped_early or not (omega.values < 0).any():
        raise ErrorBoundInfeasible(
            INFEASIBLE_MSG + f" (the set emptied after {res.steps * res.dt:.3g} s of backward "
            f"integration, {res.steps} steps)")
    out = ErrorBoundResult(
        omega_field=omega,
        value=value,
        radius_pos=position_radius(omega),
        converged=res.converged,
        tracker=tracker,
        reduced=reduced,
        R_EB=float(R_EB),
        residual=res.residual,
        steps=res.steps,
        dt=res.dt,
        horizon=None if res.converged else horizon,
    )
    if not out.contains((0.0, 0.0, 0.0)):
        raise ErrorBoundInfeasible(INFEASIBLE_MSG + " (zero error lies outside the set)")
    return out


# -- target and obstacle transforms ---------------------------------------------


def shrink_target(target: Field, radius_pos: float) -> Field:
    """Erode the target by ``radius_pos``; raises if nothing is left."""
    out = erode(target, radius_pos)
    if not (out.values < 0).any():
        raise ValueError(f"target is empty after shrinking by {radius_pos} m")
    return out


def _position_xy(grid: Grid):
    return grid.mesh[0], grid.mesh[1]


class StaticObstacle:
    """A time-invariant obstacle field."""

    def __init__(self, f: Field):
        self.field = f
        self.grid = f.grid
        self.times = np.zeros(0)

    def at(self, t: float, mode: str = "linear") -> np.ndarray:
        return self.field.values

    def dilated(self, radius: float) -> "StaticObstacle":
        return StaticObstacle(Field(self.grid, self.field.values - radius))


class SeriesObstacle:
    """Adapter giving a :class:`FieldSeries` the obstacle-sequence interface."""

    def __init__(self, series: FieldSeries, offset: float = 0.0):
        self.series = series
        self.grid = series.grid
        self.times = series.times
        self.offset = float(offset)

    def at(self, t: float, mode: str = "linear") -> np.ndarray:
        v = self.series.at(t, mode=mode)
        return v - self.offset if self.offset else v

    def dilated(self, radius: float) -> "SeriesObstacle":
        return SeriesObstacle(self.series, self.offset + radius)


class DiscSequence:
    """A disc moving along sampled centres, present only during ``[t_on, t_off]``.

    Centres are interpolated linearly between samples; after the last sample
    the disc holds its final centre until ``t_off``. Values broadcast over
    heading (shape ``(nx, ny, 1)`` on a 3-D grid).
    """

    def __init__(self, grid: Grid, times, centers, radius: float, t_on: float, t_off: float):
        times = np.asarray(times, dtype=float)
        centers = np.asarray(centers, dtype=float).reshape(-1, 2)
        if len(times) != len(centers) or len(times) == 0:
            raise ValueError("need one centre per sample time")
        if np.any(np.diff(times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        if radius < 0:
            raise ValueError("radius must be non-negative")
        self.grid = grid
        self.times = times
        self.centers = centers
        self.radius = float(radius)
        self.t_on = float(t_on)
        self.t_off = float(t_off)

    def active(self, t: float) -> bool:
        return self.t_on <= t <= self.t_off

    def center_at(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, self.centers[:, i]) for i in (0, 1)])

    def _disc(self, c) -> np.ndarray:
        x, y = _position_xy(self.grid)
        return np.hypot(x - c[0], y - c[1]) - self.radius

    def at(self, t: float, mode: str = "linear") -> np.ndarray:
        if not self.active(t):
            return np.full((1,) * self.grid.ndim, EMPTY)
        if mode == "min" and self.times[0] < t < self.times[-1]:
            k = int(np.searchsorted(self.times, t, side="right")) - 1
            return np.minimum(self._disc(self.centers[k]), self._disc(self.centers[k + 1]))
        return self._disc(self.center_at(t))

    def dilated(self, radius: float) -> "DiscSequence":
        return DiscSequence(self.grid, self.times, self.centers, self.radius + radius,
                            self.t_on, self.t_off)


class ObstacleUnion:
    """Pointwise minimum of several obstacle sequences on one grid."""

    def __init__(self, parts: Sequence):
        parts = list(parts)
        if not parts:
            raise ValueError("an obstacle union needs at least one part")
        grid = parts[0].grid
        if any(p.grid != grid for p in parts):
            raise GridMismatchError("obstacle parts live on different grids")
        self.parts = parts
        self.grid = grid
        ts = [p.times for p in parts if len(p.times)]
        self.times = np.unique(np.concatenate(ts)) if ts else np.zeros(0)

    def at(self, t: float, mode: str = "linear") -> np.ndarray:
        out = None
        for p in self.parts:
            v = p.at(t, mode)
            out = v if out is None else np.minimum(out, v)
        return out

    def dilated(self, radius: float) -> "ObstacleUnion":
        return ObstacleUnion([p.dilated(radius) for p in self.parts])


def sample_obstacles(seq, times, mode: str = "linear") -> FieldSeries:
    """Materialise an obstacle sequence on an explicit time lattice."""
    shape = seq.grid.shape
    frames = [Field(seq.grid, np.broadcast_to(seq.at(float(t), mode), shape)) for t in times]
    return FieldSeries(np.asarray(times, dtype=float), frames)


def augment_obstacles(total, radius_pos: float):
    """Inflate every frame of ``total`` by ``radius_pos`` (``None`` stays ``None``)."""
    if radius_pos < 0:
        raise ValueError("radius_pos must be non-negative")
    if total is None or radius_pos == 0:
        return total
    return total.dilated(radius_pos)


def total_obstacles(static: Field | None, induced: Sequence, window=None):
    """Union of the static obstacle field and the induced sequences.

    Returns a lazy :class:`ObstacleUnion` (``None`` if there is nothing). With
    ``window=(t0, t1)`` the union is materialised as a :class:`FieldSeries`
    on the common time lattice restricted to the window.
    """
    parts = []
    if static is not None:
        parts.append(StaticObstacle(static))
    for seq in induced:
        parts.append(SeriesObstacle(seq) if isinstance(seq, FieldSeries) else seq)
    if not parts:
        return None
    union = ObstacleUnion(parts)
    if window is None:
        return union
    t0, t1 = window
    times = union.times[(union.times >= t0) & (union.times <= t1)]
    if len(times) == 0:
        times = np.array([float(t0)])
    return sample_obstacles(union, times)


# -- nominal planning ------------------------------------------------------------


@dataclass(frozen=True)
class PlanOptions:
    """Options for :func:`plan_nominal`.

    ``dt_traj`` defaults to the solver's CFL step. ``horizon`` bounds how far
    before ``sta`` the backward solve may go; by default three grid diagonals
    at the slowest reduced speed (or half the fastest, if that is zero).
    """

    solver: SolveOptions = SolveOptions(store_stride=4)
    dt_traj: float | None = None
    horizon: float | None = None
    keep_brs: bool = True

    def __post_init__(self):
        if self.dt_traj is not None and self.dt_traj <= 0:
            raise ValueError("dt_traj must be positive")
        if self.horizon is not None and self.horizon <= 0:
            raise ValueError("horizon must be positive")


@dataclass(frozen=True, eq=False)
class NominalTrajectory:
    """Samples ``states[k]`` at ``times[k]``; ``controls[k]`` is held on ``[t_k, t_k+1)``.

    The last control is a copy of the previous one (or the reduced midpoint
    for a single-sample trajectory) and is never applied.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[tuple[float, VehicleState, ControlInput]]:
        for t, x, u in zip(self.times, self.states, self.controls):
            yield float(t), VehicleState(*x), ControlInput(*u)

    def state_at(self, t) -> np.ndarray:
        """State(s) at ``t``, re-integrating the held control from the preceding sample.

        Times before the first sample return the first state, times after
        the last sample the last state. Returns ``(3,)`` or ``(n, 3)``.
        """
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)
        h = np.clip(t - self.times[k], 0.0, None)
        h = np.where(k == len(self.times) - 1, 0.0, h)
        x = self.states[k].T
        u = self.controls[k].T
        out = dubins_rk4(x, u, (0.0, 0.0), h).T
        return out[0] if scalar else out


@dataclass(eq=False)
class PlanResult:
    nominal: NominalTrajectory
    ldt: float
    sta: float
    arrival: float
    dt_traj: float
    brs_series: FieldSeries | None = field(default=None, repr=False)
    solve_steps: int = 0
    solve_dt: float = float("nan")


class _GradientLookup:
    """Gradient of a stored value series at ``(x, t)``, blended linearly in time."""

    def __init__(self, series: FieldSeries):
        self.series = series

    def __call__(self, x, t: float) -> np.ndarray:
        s = self.series
        times = s.times
        g = s.grid
        if len(times) == 1 or t <= times[0]:
            return gradient_values_at(g, s.frames[0].values, x)
        if t >= times[-1]:
            return gradient_values_at(g, s.frames[-1].values, x)
        k = int(np.searchsorted(times, t, side="right")) - 1
        w = (t - times[k]) / (times[k + 1] - times[k])
        a = gradient_values_at(g, s.frames[k].values, x)
        if w == 0.0:
            return a
        b = gradient_values_at(g, s.frames[k + 1].values, x)
        return (1.0 - w) * a + w * b


def _default_horizon(grid: Grid, reduced: DubinsBounds) -> float:
    diag = float(np.hypot(grid.maxs[0] - grid.mins[0], grid.maxs[1] - grid.mins[1]))
    speed = reduced.v_min if reduced.v_min > 0 else 0.5 * reduced.v_max
    return 3.0 * diag / speed


def _wrap_state(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=float)
    out[2] = (out[2] + np.pi) % (2 * np.pi) - np.pi
    return out


def plan_nominal(
    x0,
    sta: float,
    shrunk_target: Field,
    augmented_obstacles,
    reduced: DubinsBounds,
    grid: Grid,
    opts: PlanOptions = PlanOptions(),
) -> PlanResult:
    """Latest departure time and nominal trajectory for one vehicle.

    Solves the reach-avoid problem backward from ``sta`` until ``x0`` enters
    the backward reachable set; that time is the latest departure time. The
    nominal trajectory is then rolled out forward from ``(x0, ldt)`` with the
    optimal reduced-authority control read from the value gradient, until it
    enters ``shrunk_target``.

    Raises
    ------
    UnreachableError
        ``x0`` never enters the backward reachable set within the horizon.
    ConsistencyError
        The rollout misses the target by more than one step past ``sta``.
    """
    if shrunk_target.grid != grid:
        raise GridMismatchError("target is not on the planning grid")
    x0 = _wrap_state(np.asarray(x0, dtype=float))
    if not grid.contains(x0):
        raise ValueError(f"start {x0.tolist()} outside the planning grid")
    if augmented_obstacles is not None and augmented_obstacles.grid != grid:
        raise GridMismatchError("obstacles are not on the planning grid")
    mid = np.array([reduced.v_mid, 0.0])

    if interpolate(shrunk_target, x0) <= 0.0:
        nominal = NominalTrajectory(np.array([float(sta)]), x0[None, :], mid[None, :])
        brs = FieldSeries([sta], [shrunk_target]) if opts.keep_brs else None
        return PlanResult(nominal, float(sta), float(sta), float(sta),
                          opts.dt_traj or float("nan"), brs)

    horizon = opts.horizon or _default_horizon(grid, reduced)
    res = solve_hjvi(
        grid, shrunk_target, augmented_obstacles, rtt_hamiltonian(reduced),
        sta - horizon, sta, opts.solver,
        stop_when=lambda t, v: interpolate_values(grid, v, x0) <= 0.0,
    )
    if not res.stopped_early:
        raise UnreachableError(
            f"unreachable under reduced authority: start {x0.tolist()} not in the "
            f"backward reachable set within {horizon:.1f} s of sta"
        )
    series = res.series
    ldt = earliest_membership(series, x0)
    dt = opts.dt_traj or res.dt
    grad = _GradientLookup(series)
    times, states, controls = [ldt], [x0], []
    x, t = x0, ldt
    while True:
        if interpolate(shrunk_target, x) <= 0.0:
            break
        if t > sta + dt * (1 + 1e-9):
            raise ConsistencyError(
                f"nominal rollout missed the target: at t={t:.3f} (sta={sta}) "
                f"the vehicle is at {x.tolist()}"
            )
        p = grad(x, t)
        _, u = ham_rtt(x, p, reduced)
        u = np.array([u.v, u.omega])
        x = _wrap_state(dubins_rk4(x, u, (0.0, 0.0), dt))
        if not grid.contains(x):
            raise ConsistencyError(f"nominal rollout left the planning grid at t={t + dt:.3f}")
        t = t + dt
        controls.append(u)
        times.append(t)
        states.append(x)
    controls.append(controls[-1] if controls else mid)
    nominal = NominalTrajectory(np.array(times), np.array(states), np.array(controls))
    return PlanResult(
        nominal=nominal, ldt=float(ldt), sta=float(sta), arrival=float(times[-1]),
        dt_traj=float(dt), brs_series=series if opts.keep_brs else None,
        solve_steps=res.steps, solve_dt=res.dt,
    )


def induce_obstacles(
    plan: PlanResult,
    radius_pos: float,
    rc: float,
    planning_grid: Grid,
    occupy_after_arrival: bool = False,
) -> DiscSequence:
    """Moving obstacle that vehicle ``plan`` presents to lower-priority vehicles.

    A disc of radius ``radius_pos + rc`` around the nominal position from the
    latest departure time until ``sta`` (indefinitely with
    ``occupy_after_arrival``); empty before departure.
    """
    pos = plan.nominal.states[:, :2]
    for p in pos:
        if not planning_grid.contains(p, axes=(0, 1)):
            raise ValueError(f"nominal position {p.tolist()} outside the planning grid")
    t_off = np.inf if occupy_after_arrival else max(plan.sta, plan.arrival)
    return DiscSequence(planning_grid, plan.nominal.times, pos, radius_pos + rc, plan.ldt, t_off)


# -- export ----------------------------------------------------------------------


def write_nominal_csv(path, plans: dict) -> None:
    """``t,vehicle,x,y,theta,v,omega`` rows for every vehicle in ``plans`` (id -> PlanResult)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "vehicle", "x", "y", "theta", "v", "omega"])
        for vid, plan in plans.items():
            for t, x, u in plan.nominal:
                w.writerow([repr(t), vid, repr(float(x.px)), repr(float(x.py)),
                            repr(float(x.theta)), repr(float(u.v)), repr(float(u.omega))])


def read_nominal_csv(path) -> dict:
    """Inverse of :func:`write_nominal_csv`: vehicle id -> :class:`NominalTrajectory`."""
    rows: dict = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["vehicle"], []).append(
                [float(r[k]) for k in ("t", "x", "y", "theta", "v", "omega")]
            )
    out = {}
    for vid, data in rows.items():
        a = np.array(data)
        out[vid] = NominalTrajectory(a[:, 0], a[:, 1:4], a[:, 4:6])
    return out


def write_obstacle_frames(seq, directory, times, mode: str = "linear") -> None:
    """One field CSV per sampled time plus ``index.csv`` mapping time to file.

    Frames are written on the position plane only when the sequence is
    cylindrical in heading (a :class:`DiscSequence`), which keeps the files
    small; otherwise on the full grid.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grid = seq.grid
    planar = isinstance(seq, DiscSequence) and grid.ndim == 3
    out_grid = grid.drop_axis(2) if planar else grid
    with open(directory / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "file"])
        for k, t in enumerate(times):
            v = seq.at(float(t), mode)
            v = np.broadcast_to(v, grid.shape)
            if planar:
                v = v[:, :, 0]
            name = f"frame_{k}.csv"
            write_field_csv(Field(out_grid, np.array(v)), directory / name)
            w.writerow([repr(float(t)), name])


def disc_sequence_to_dict(seq: DiscSequence) -> dict:
    return {
        "times": seq.times.tolist(),
        "centers": seq.centers.tolist(),
        "radius": seq.radius,
        "t_on": seq.t_on,
        "t_off": seq.t_off if np.isfinite(seq.t_off) else None,
    }


def disc_sequence_from_dict(d: dict, grid: Grid) -> DiscSequence:
    t_off = np.inf if d["t_off"] is None else d["t_off"]
    return DiscSequence(grid, d["times"], d["centers"], d["radius"], d["t_on"], t_off)


def with_solver(opts: PlanOptions, solver: SolveOptions) -> PlanOptions:
    return replace(opts, solver=solver)
