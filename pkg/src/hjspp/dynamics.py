"""Dubins-car vehicle and tracking-error dynamics, with closed-form Hamiltonians.

All functions broadcast: scalar arguments give scalars, array arguments give
arrays. Angles are wrapped to ``[-pi, pi)``.

Vehicle model::

    px' = v cos(theta) + dx,   py' = v sin(theta) + dy,   theta' = omega

Tracking error of a vehicle relative to a reference ("virtual evader") with
state ``(pr, theta_r)`` and control ``(v_r, omega_r)``, expressed in the
reference's body frame (``e = R(-theta_r) (p - pr)``, ``e_theta = theta - theta_r``)::

    ex' = v cos(e_theta) - v_r + omega_r ey + dx
    ey' = v sin(e_theta) - omega_r ex + dy
    e_theta' = omega - omega_r
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from hjspp.hjsolver import HamiltonianSpec


def wrap_angle(theta):
    """Wrap to ``[-pi, pi)``."""
    wrapped = (np.asarray(theta, dtype=float) + np.pi) % (2 * np.pi) - np.pi
    return float(wrapped) if wrapped.ndim == 0 else wrapped


@dataclass(frozen=True)
class DubinsBounds:
    v_min: float
    v_max: float
    omega_max: float
    d_max: float = 0.0

    def __post_init__(self):
        if not 0 <= self.v_min <= self.v_max:
            raise ValueError(f"need 0 <= v_min <= v_max, got [{self.v_min}, {self.v_max}]")
        if self.omega_max <= 0:
            raise ValueError("omega_max must be positive")
        if self.d_max < 0:
            raise ValueError("d_max must be non-negative")

    @property
    def v_mid(self) -> float:
        return 0.5 * (self.v_min + self.v_max)

    def contains(self, u, tol: float = 1e-9) -> bool:
        v, w = u
        return bool(
            np.all(v >= self.v_min - tol) and np.all(v <= self.v_max + tol)
            and np.all(np.abs(w) <= self.omega_max + tol)
        )

    def strictly_inside(self, other: "DubinsBounds") -> bool:
        """True if this control set sits strictly inside ``other``'s."""
        return (
            other.v_min <= self.v_min and self.v_max <= other.v_max
            and (other.v_min < self.v_min or self.v_max < other.v_max)
            and self.omega_max < other.omega_max
        )


class _StateBase(NamedTuple):
    px: float
    py: float
    theta: float


class VehicleState(_StateBase):
    """Planar pose; ``theta`` is wrapped on construction."""

    __slots__ = ()

    def __new__(cls, px, py, theta):
        return super().__new__(cls, px, py, wrap_angle(theta))


class _ErrorBase(NamedTuple):
    ex: float
    ey: float
    etheta: float


class ErrorState(_ErrorBase):
    """Tracking error in the reference body frame; ``etheta`` is wrapped."""

    __slots__ = ()

    def __new__(cls, ex, ey, etheta):
        return super().__new__(cls, ex, ey, wrap_angle(etheta))


class ControlInput(NamedTuple):
    v: float
    omega: float


def dubins_flow(x, u, d=(0.0, 0.0)) -> np.ndarray:
    px, py, th = x
    v, w = u
    dx, dy = d
    return np.array([v * np.cos(th) + dx, v * np.sin(th) + dy, w + 0.0 * th])


def dubins_rk4(x, u, d, h):
    """One RK4 step of :func:`dubins_flow` with controls and disturbance held.

    ``x`` may be a single state ``(3,)`` or a stack ``(3, n)``; ``u`` and ``d``
    broadcast against it. The heading is not wrapped.
    """
    x = np.asarray(x, dtype=float)
    k1 = dubins_flow(x, u, d)
    k2 = dubins_flow(x + 0.5 * h * k1, u, d)
    k3 = dubins_flow(x + 0.5 * h * k2, u, d)
    k4 = dubins_flow(x + h * k3, u, d)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def error_flow(e, u, u_r, d=(0.0, 0.0)) -> np.ndarray:
    ex, ey, eth = e
    v, w = u
    vr, wr = u_r
    dx, dy = d
    return np.array([
        v * np.cos(eth) - vr + wr * ey + dx,
        v * np.sin(eth) - wr * ex + dy,
        w - wr + 0.0 * eth,
    ])


def relative_pose(x, x_ref) -> ErrorState:
    """Error of pose ``x`` in the body frame of ``x_ref`` (arrays broadcast)."""
    px, py, th = x
    rx, ry, rth = x_ref
    c, s = np.cos(rth), np.sin(rth)
    dxw, dyw = px - rx, py - ry
    return ErrorState(c * dxw + s * dyw, -s * dxw + c * dyw, wrap_angle(th - rth))


def rotate(vec, theta):
    """Rotate planar vector(s) ``vec`` by ``theta``."""
    x, y = vec
    c, s = np.cos(theta), np.sin(theta)
    return np.array([c * x - s * y, s * x + c * y])


def _bang(coef, lo, hi):
    """Argmax of ``coef * u`` over ``[lo, hi]``; ties go to the midpoint."""
    return np.where(coef > 0, hi, np.where(coef < 0, lo, 0.5 * (lo + hi)))


def ham_eb(e, p, tracker: DubinsBounds, reduced: DubinsBounds):
    """Tracking-error Hamiltonian ``max_u min_{u_r, d} p . f_e`` and its optimisers.

    Returns
    -------
    value, u_opt, ur_worst, d_worst
        ``u_opt``/``ur_worst`` are :class:`ControlInput`; ``d_worst`` is a
        2-tuple (zero where the position costate vanishes).
    """
    ex, ey, eth = e
    p1, p2, p3 = p
    q = p1 * np.cos(eth) + p2 * np.sin(eth)
    v = _bang(q, tracker.v_min, tracker.v_max)
    w = _bang(p3, -tracker.omega_max, tracker.omega_max)
    vr = _bang(p1, reduced.v_min, reduced.v_max)  # minimises -p1 * v_r
    c = p1 * ey - p2 * ex - p3
    wr = _bang(-c, -reduced.omega_max, reduced.omega_max)
    norm = np.hypot(p1, p2)
    safe = np.where(norm > 0, norm, 1.0)
    dx = np.where(norm > 0, -tracker.d_max * p1 / safe, 0.0)
    dy = np.where(norm > 0, -tracker.d_max * p2 / safe, 0.0)
    f = error_flow(e, (v, w), (vr, wr), (dx, dy))
    value = p1 * f[0] + p2 * f[1] + p3 * f[2]
    if np.ndim(value) == 0:
        value, v, w, vr, wr, dx, dy = (float(z) for z in (value, v, w, vr, wr, dx, dy))
    return value, ControlInput(v, w), ControlInput(vr, wr), (dx, dy)


def ham_eb_value(e, p, tracker: DubinsBounds, reduced: DubinsBounds):
    """Value of :func:`ham_eb` only, without building the optimisers."""
    ex, ey, eth = e
    p1, p2, p3 = p
    q = p1 * np.cos(eth) + p2 * np.sin(eth)
    c = p1 * ey - p2 * ex - p3
    return (
        tracker.v_max * np.maximum(q, 0) + tracker.v_min * np.minimum(q, 0)
        + tracker.omega_max * np.abs(p3)
        - reduced.v_max * np.maximum(p1, 0) - reduced.v_min * np.minimum(p1, 0)
        - reduced.omega_max * np.abs(c)
        - tracker.d_max * np.hypot(p1, p2)
    )


def ham_rtt(x, p, reduced: DubinsBounds):
    """Planning Hamiltonian ``min_u p . f`` over the reduced set, no disturbance."""
    px, py, th = x
    p1, p2, p3 = p
    q = p1 * np.cos(th) + p2 * np.sin(th)
    v = _bang(-q, reduced.v_min, reduced.v_max)
    w = _bang(-p3, -reduced.omega_max, reduced.omega_max)
    value = v * q + w * p3
    if np.ndim(value) == 0:
        return float(value), ControlInput(float(v), float(w))
    return value, ControlInput(v, w)


def ham_rtt_value(x, p, reduced: DubinsBounds):
    px, py, th = x
    p1, p2, p3 = p
    q = p1 * np.cos(th) + p2 * np.sin(th)
    return (reduced.v_min * np.maximum(q, 0) + reduced.v_max * np.minimum(q, 0)
            - reduced.omega_max * np.abs(p3))


def _arc_extremes(center, half, fn):
    """Range of ``fn`` (``np.cos`` or ``np.sin``) over the closed arc ``center +- half``."""
    lo = np.minimum(fn(center - half), fn(center + half))
    hi = np.maximum(fn(center - half), fn(center + half))
    peak = 0.0 if fn is np.cos else 0.5 * np.pi
    hi = np.where(np.abs(wrap_angle(peak - center)) <= half, 1.0, hi)
    lo = np.where(np.abs(wrap_angle(peak + np.pi - center)) <= half, -1.0, lo)
    return lo, hi


def alpha_bounds_eb(grid, tracker: DubinsBounds, reduced: DubinsBounds, per_node: bool = False):
    """Per-axis bounds on ``|dH/dp|`` for :func:`ham_eb` over ``grid`` (ex, ey, etheta).

    The grid-wide bounds use the largest ``|ex|``, ``|ey|`` on the grid.

    With ``per_node`` the position bounds are exact suprema over all costates
    at each node. The partials are piecewise constant in the signs of ``p_x``
    and ``q = p . (cos etheta, sin etheta)`` apart from the disturbance term,
    so each feasible sign pair is visited and the disturbance direction ranges
    over the arc of planar costate directions compatible with it. The sign of
    the reference turn coefficient is unconstrained because ``p_theta`` is free.
    """
    if per_node:
        ex, ey, eth = grid.mesh
        d = tracker.d_max
        ax = np.zeros(np.broadcast_shapes(ex.shape, ey.shape, eth.shape))
        ay = np.zeros_like(ax)
        for s1 in (1.0, -1.0):
            a1 = 0.0 if s1 > 0 else np.pi
            vr = reduced.v_max if s1 > 0 else reduced.v_min
            for sq in (1.0, -1.0):
                a2 = eth if sq > 0 else eth + np.pi
                gap = wrap_angle(a2 - a1)
                half = 0.5 * (np.pi - np.abs(gap))
                feasible = half > 1e-12
                mid = a1 + 0.5 * gap
                v = tracker.v_max if sq > 0 else tracker.v_min
                c_lo, c_hi = _arc_extremes(mid, half, np.cos)
                s_lo, s_hi = _arc_extremes(mid, half, np.sin)
                for sc in (1.0, -1.0):
                    base_x = v * np.cos(eth) - vr - sc * reduced.omega_max * ey
                    bx = np.maximum(np.abs(base_x - d * c_lo), np.abs(base_x - d * c_hi))
                    base_y = v * np.sin(eth) + sc * reduced.omega_max * ex
                    by = np.maximum(np.abs(base_y - d * s_lo), np.abs(base_y - d * s_hi))
                    ax = np.where(feasible, np.maximum(ax, bx), ax)
                    ay = np.where(feasible, np.maximum(ay, by), ay)
        return [ax, ay, np.asarray(tracker.omega_max + reduced.omega_max)]
    max_ex = max(abs(grid.mins[0]), abs(grid.maxs[0]))
    max_ey = max(abs(grid.mins[1]), abs(grid.maxs[1]))
    return np.array([
        tracker.v_max + reduced.v_max + reduced.omega_max * max_ey + tracker.d_max,
        tracker.v_max + reduced.omega_max * max_ex + tracker.d_max,
        tracker.omega_max + reduced.omega_max,
    ])


def alpha_bounds_rtt(grid, reduced: DubinsBounds, per_node: bool = False):
    """Bounds on ``|dH/dp|`` for :func:`ham_rtt`: ``(v_max, v_max, omega_max)``.

    With ``per_node`` the position bounds keep their heading dependence
    (``v_max |cos theta|``, ``v_max |sin theta|``) as arrays broadcastable
    to the grid; they still hold for every costate.
    """
    if not per_node:
        return np.array([reduced.v_max, reduced.v_max, reduced.omega_max])
    th = grid.mesh[2]
    return [reduced.v_max * np.abs(np.cos(th)), reduced.v_max * np.abs(np.sin(th)),
            np.asarray(reduced.omega_max)]


def eb_hamiltonian(tracker: DubinsBounds, reduced: DubinsBounds) -> HamiltonianSpec:
    def fused(grid, alpha):
        from hjspp import _kernels

        return _kernels.make_eb_rate(grid, alpha, tracker, reduced) if _kernels.supports(grid) else None

    return HamiltonianSpec(
        eval=lambda coords, p: ham_eb_value(coords, p, tracker, reduced),
        alpha_bounds=lambda grid: alpha_bounds_eb(grid, tracker, reduced, per_node=True),
        fused=fused,
    )


def rtt_hamiltonian(reduced: DubinsBounds) -> HamiltonianSpec:
    def fused(grid, alpha):
        from hjspp import _kernels

        return _kernels.make_rtt_rate(grid, alpha, reduced) if _kernels.supports(grid) else None

    return HamiltonianSpec(
        eval=lambda coords, p: ham_rtt_value(coords, p, reduced),
        alpha_bounds=lambda grid: alpha_bounds_rtt(grid, reduced, per_node=True),
        fused=fused,
    )


def holonomic_hamiltonian(speed: float) -> HamiltonianSpec:
    """``H = -speed * |p|`` on every axis: a point that moves anywhere at ``speed``."""

    def eval_(coords, p):
        sq = 0.0
        for pi in p:
            sq = sq + pi * pi
        return -speed * np.sqrt(sq)

    return HamiltonianSpec(eval=eval_, alpha_bounds=lambda grid: np.full(grid.ndim, float(speed)))
