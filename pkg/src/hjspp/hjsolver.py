"""Backward-in-time solver for the final-value double-obstacle HJ variational inequality.

The value function obeys ``D_t V + H(x, grad V) = 0`` for ``t <= tf`` with the
pointwise constraints ``V <= l`` (target) and ``V >= -g(t)`` (obstacle). ``H``
is supplied in that sign convention, e.g. ``min_u p . f`` for "some control
reaches the target". Internally the equation is integrated in reversed time
``tau = tf - t`` where it reads ``V_tau - H = 0``; spatial derivatives are
first-order one-sided differences combined with global Lax-Friedrichs
dissipation, and the CFL-limited step is advanced with forward Euler or
TVD-RK2. After every step ``V <- max(min(V, l), -g(t))``.
"""

from __future__ import annotations

import csv
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hjspp.gridcore import Field, FieldSeries, Grid, GridMismatchError, interpolate

log = logging.getLogger(__name__)

#: Number of calls to each solver entry point in this process (instrumentation).
solve_counts: Counter = Counter()


@dataclass(frozen=True)
class HamiltonianSpec:
    """A vectorised Hamiltonian and per-axis bounds on ``|dH/dp_axis|``.

    ``eval(coords, p)`` receives the grid's broadcastable coordinate arrays and
    one costate array per axis and returns ``H`` on every node.
    ``alpha_bounds(grid)`` returns one bound per axis on ``|dH/dp_axis|`` over
    all costates: a scalar, or an array broadcastable to the grid when the
    bound depends on the state.

    ``fused(grid, alpha)`` may return a compiled function computing the whole
    Lax-Friedrichs rate for a values array (or ``None`` when it does not
    support ``grid``); it must agree with the generic path. Setting the
    environment variable ``HJSPP_NO_JIT=1`` disables it.
    """

    eval: Callable[[Sequence[np.ndarray], Sequence[np.ndarray]], np.ndarray]
    alpha_bounds: Callable[[Grid], np.ndarray]
    fused: Callable | None = None


@dataclass(frozen=True)
class SolveOptions:
    cfl_factor: float = 0.5
    derivative_scheme: str = "upwind1"
    time_integrator: str = "tvd_rk2"
    convergence_tol: float = 1e-3
    max_steps: int = 200_000
    store_stride: int = 1
    obstacle_mode: str = "linear"
    diagnostics: str | None = None

    def __post_init__(self):
        if not 0 < self.cfl_factor <= 1:
            raise ValueError("cfl_factor must lie in (0, 1]")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.derivative_scheme != "upwind1":
            raise ValueError(f"unsupported derivative scheme {self.derivative_scheme!r}")
        if self.time_integrator not in ("euler", "tvd_rk2"):
            raise ValueError(f"unsupported time integrator {self.time_integrator!r}")
        if self.obstacle_mode not in ("linear", "min"):
            raise ValueError(f"unsupported obstacle mode {self.obstacle_mode!r}")
        if self.store_stride < 1:
            raise ValueError("store_stride must be >= 1")


@dataclass
class SolveResult:
    series: FieldSeries
    converged: bool
    residual: float
    dt: float
    steps: int
    stopped_early: bool = False
    stats: dict = field(default_factory=dict)


def one_sided_differences(values: np.ndarray, grid: Grid, axis: int):
    """Backward and forward first differences along ``axis``.

    Periodic axes wrap; open boundaries use linearly extrapolated ghost nodes,
    so the outer one-sided difference copies the inner one.
    """
    h = grid.spacing[axis]
    if grid.periodic[axis]:
        fwd = (np.roll(values, -1, axis=axis) - values) / h
        bwd = np.roll(fwd, 1, axis=axis)
        return bwd, fwd
    d = np.diff(values, axis=axis) / h
    first = np.take(d, [0], axis=axis)
    last = np.take(d, [-1], axis=axis)
    bwd = np.concatenate([first, d], axis=axis)
    fwd = np.concatenate([d, last], axis=axis)
    return bwd, fwd


def lax_friedrichs(ham: HamiltonianSpec, coords, p_minus, p_plus, alpha) -> np.ndarray:
    """Numerical Hamiltonian of the reversed-time equation ``V_tau + G = 0``, ``G = -H``.

    ``G_hat = G(x, (p- + p+)/2) - sum_a alpha_a (p+_a - p-_a) / 2``, so a
    reversed-time step is ``V <- V - dtau * G_hat``.
    """
    p_avg = [(m + p) * 0.5 for m, p in zip(p_minus, p_plus)]
    g_hat = -ham.eval(coords, p_avg)
    for a, (m, p) in enumerate(zip(p_minus, p_plus)):
        g_hat = g_hat - alpha[a] * (p - m) * 0.5
    return g_hat


def cfl_step(grid: Grid, alpha, cfl_factor: float) -> float:
    rate = float(np.sum(np.asarray(alpha, dtype=float) / grid.spacing))
    if rate <= 0:
        raise ValueError("alpha bounds are all zero; the Hamiltonian has no dynamics")
    return cfl_factor / rate


class _Stepper:
    def __init__(self, grid: Grid, ham: HamiltonianSpec, opts: SolveOptions):
        self.grid = grid
        self.ham = ham
        self.opts = opts
        self.coords = grid.mesh
        alpha = ham.alpha_bounds(grid)
        if len(alpha) != grid.ndim:
            raise ValueError(f"need {grid.ndim} alpha bounds, got {len(alpha)}")
        self.alpha = [np.asarray(a, dtype=float) for a in alpha]
        if any(np.any(a < 0) or not np.all(np.isfinite(a)) for a in self.alpha):
            raise ValueError("alpha bounds must be finite and non-negative")
        self.dt = cfl_step(grid, [float(np.max(a)) for a in self.alpha], opts.cfl_factor)
        self._fused = None
        if ham.fused is not None and os.environ.get("HJSPP_NO_JIT", "") != "1":
            self._fused = ham.fused(grid, self.alpha)

    def rate(self, v: np.ndarray) -> np.ndarray:
        if self._fused is not None:
            return self._fused(v)
        pm, pp = [], []
        for a in range(self.grid.ndim):
            m, p = one_sided_differences(v, self.grid, a)
            pm.append(m)
            pp.append(p)
        return -lax_friedrichs(self.ham, self.coords, pm, pp, self.alpha)

    def step(self, v: np.ndarray, dt: float) -> np.ndarray:
        v1 = v + dt * self.rate(v)
        if self.opts.time_integrator == "euler":
            return v1
        v2 = v1 + dt * self.rate(v1)
        return 0.5 * (v + v2)


def _obstacle_at(obstacle, t: float, mode: str):
    if obstacle is None:
        return None
    if isinstance(obstacle, FieldSeries):
        return obstacle.at(t, mode=mode)
    return obstacle.at(t)


def _check_grid(name: str, obj, grid: Grid):
    if obj is not None and obj.grid != grid:
        raise GridMismatchError(f"{name} is not on the solver grid")


class _Diagnostics:
    def __init__(self, path):
        self.fh = open(path, "w", newline="") if path else None
        if self.fh:
            self.w = csv.writer(self.fh)
            self.w.writerow(["step", "t", "dt", "residual", "min_v", "max_v"])

    def row(self, step, t, dt, residual, v):
        if self.fh:
            self.w.writerow([step, t, dt, residual, float(v.min()), float(v.max())])

    def close(self):
        if self.fh:
            self.fh.close()


def solve_hjvi(
    grid: Grid,
    target_l: Field,
    obstacle_g,
    ham: HamiltonianSpec,
    t0: float,
    tf: float,
    opts: SolveOptions = SolveOptions(),
    stop_when: Callable[[float, np.ndarray], bool] | None = None,
) -> SolveResult:
    """Solve the VI backward from ``tf`` to ``t0``.

    Parameters
    ----------
    obstacle_g
        ``None`` (no obstacle), a :class:`FieldSeries`, or any object with
        ``grid``, ``times`` and ``at(t) -> ndarray``. A single-frame series
        acts as a static obstacle.
    stop_when
        Optional predicate ``(t, V) -> bool`` checked after every step; the
        solve ends early once it returns true. The stopping frame is stored.

    Returns
    -------
    SolveResult
        Frames in ascending time, from the last computed time up to ``tf``.
    """
    if not t0 < tf:
        raise ValueError(f"need t0 < tf, got t0={t0}, tf={tf}")
    _check_grid("target", target_l, grid)
    _check_grid("obstacle", obstacle_g, grid)
    solve_counts["solve_hjvi"] += 1
    stepper = _Stepper(grid, ham, opts)
    l = target_l.values
    mode = opts.obstacle_mode

    def project(v, t):
        v = np.minimum(v, l)
        g = _obstacle_at(obstacle_g, t, mode)
        if g is not None:
            v = np.maximum(v, -g)
        return v

    v = l.copy()
    g_f = _obstacle_at(obstacle_g, tf, mode)
    if g_f is not None:
        v = np.maximum(l, -g_f)
    times, frames = [tf], [v]
    t, k = tf, 0
    residual = 0.0
    stopped = False
    diag = _Diagnostics(opts.diagnostics)
    try:
        while t > t0 + 1e-12 * max(1.0, abs(t0)):
            dt = min(stepper.dt, t - t0)
            v_new = project(stepper.step(v, dt), t - dt)
            if not np.all(np.isfinite(v_new)):
                raise FloatingPointError(
                    f"non-finite values at step {k + 1} (t={t - dt:.6g}); "
                    "check alpha bounds and cfl_factor"
                )
            residual = float(np.max(np.abs(v_new - v)))
            v = v_new
            t -= dt
            k += 1
            diag.row(k, t, dt, residual, v)
            stop = stop_when is not None and stop_when(t, v)
            if k % opts.store_stride == 0 or stop or t <= t0 + 1e-12 * max(1.0, abs(t0)):
                times.append(t)
                frames.append(v)
            if stop:
                stopped = True
                break
            if k >= opts.max_steps:
                log.warning("solve_hjvi hit max_steps=%d at t=%g", opts.max_steps, t)
                break
    finally:
        diag.close()
    if times[-1] != t:
        times.append(t)
        frames.append(v)
    times = np.asarray(times[::-1])
    series = FieldSeries(times, [Field(grid, f) for f in frames[::-1]])
    return SolveResult(series, converged=True, residual=residual, dt=stepper.dt, steps=k,
                       stopped_early=stopped)


def converge_invariant(
    grid: Grid,
    target_l: Field,
    ham: HamiltonianSpec,
    opts: SolveOptions = SolveOptions(),
    stop_when: Callable[[float, np.ndarray], bool] | None = None,
    horizon: float | None = None,
) -> SolveResult:
    """Step backward until ``max|V_new - V_old| < convergence_tol * dt``.

    Values are kept within ``[min l, l]``. Without the floor, states that
    can be driven off the grid keep losing value forever (the infinite-horizon
    value there is unbounded below) and the residual never settles; the floor
    is below zero whenever ``l`` takes negative values, so the sub-zero set is
    unchanged.

    Returns only the final frame; ``converged`` is false when ``max_steps``
    (or ``stop_when``) ended the iteration first. ``residual`` is the last
    step's maximum absolute change.

    With ``horizon`` the iteration also ends once that much time has been
    integrated; the result is then the finite-horizon value (``converged``
    false unless the residual test passed first, ``stats["horizon_reached"]``
    true).
    """
    _check_grid("target", target_l, grid)
    solve_counts["converge_invariant"] += 1
    stepper = _Stepper(grid, ham, opts)
    l = target_l.values
    floor = float(l.min())
    v = l.copy()
    dt = stepper.dt
    tol = opts.convergence_tol * dt
    residual = np.inf
    converged = stopped = reached = False
    k = 0
    diag = _Diagnostics(opts.diagnostics)
    if horizon is not None and horizon <= 0:
        raise ValueError("horizon must be positive")
    try:
        while k < opts.max_steps:
            if horizon is not None and k * dt >= horizon - 1e-12 * horizon:
                reached = True
                break
            v_new = np.clip(stepper.step(v, dt), floor, l)
            if not np.all(np.isfinite(v_new)):
                raise FloatingPointError(f"non-finite values at step {k + 1}")
            residual = float(np.max(np.abs(v_new - v)))
            v = v_new
            k += 1
            diag.row(k, -k * dt, dt, residual, v)
            if residual < tol:
                converged = True
                break
            if stop_when is not None and stop_when(-k * dt, v):
                stopped = True
                break
    finally:
        diag.close()
    if not converged and not stopped and not reached:
        log.warning("converge_invariant: no convergence in %d steps (residual %.3g)", k, residual)
    series = FieldSeries([-k * dt], [Field(grid, v)])
    return SolveResult(series, converged=converged, residual=residual, dt=dt, steps=k,
                       stopped_early=stopped, stats={"horizon_reached": reached})


def earliest_membership(series: FieldSeries, state) -> float | None:
    """Largest stored time whose frame contains ``state`` (value <= 0), else ``None``.

    Frames are scanned from the latest backwards; for a backward solve that is
    the order in which the set was computed.
    """
    state = np.asarray(state, dtype=float)
    if not series.grid.contains(state):
        raise ValueError(f"state {state.tolist()} outside the grid")
    for t, frame in zip(series.times[::-1], series.frames[::-1]):
        if interpolate(frame, state) <= 0.0:
            return float(t)
    return None
