"""Self-contained verification suites run by ``hjspp verify``.

Each check returns a :class:`Check` record; a suite passes when every check
does. The fixtures are small analytic or brute-force problems, so the suites
need no run directory.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from hjspp.dynamics import (
    DubinsBounds, ham_eb, ham_eb_value, ham_rtt, holonomic_hamiltonian,
)
from hjspp.gridcore import (
    Field, disc_field, dilate, erode, make_grid, project_min, set_complement,
    set_intersect, set_union, zero_contours,
)
from hjspp.hjsolver import SolveOptions, solve_hjvi

SUITES = ("analytic", "oracle", "invariants")

TRACKER = DubinsBounds(0.0, 25.0, 2.0, 6.0)
REDUCED = DubinsBounds(11.0, 13.0, 1.2)


@dataclass
class Check:
    name: str
    passed: bool
    value: float | None = None
    tolerance: float | None = None
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = ""
        if self.value is not None:
            extra = f" value={self.value:.6g}"
            if self.tolerance is not None:
                extra += f" tol={self.tolerance:.6g}"
        return f"{status} {self.name}{extra}"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        out.seconds = time.perf_counter() - t0
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- analytic ------------------------------------------------------------------


def hausdorff_to_circle(f: Field, center, radius: float, samples: int = 2000) -> float:
    """Symmetric Hausdorff distance between the zero contour of ``f`` and a circle.

    The contour is treated as polyline segments, not just its vertices; the
    circle is sampled at ``samples`` points.
    """
    lines = zero_contours(f)
    if not lines:
        return float("inf")
    c = np.asarray(center, dtype=float)
    a = np.vstack([ln[:-1] for ln in lines])
    b = np.vstack([ln[1:] for ln in lines])
    # distance from contour to circle: vertices and segment midpoints (the chord sags inwards)
    probe = np.vstack([a, b, 0.5 * (a + b)])
    d_contour = float(np.abs(np.hypot(*(probe - c).T) - radius).max())
    ang = np.linspace(0, 2 * np.pi, samples, endpoint=False)
    circ = c + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    ab = b - a
    len2 = np.maximum((ab ** 2).sum(axis=1), 1e-300)
    d_circle = 0.0
    for chunk in np.array_split(circ, 16):
        ap = chunk[:, None, :] - a[None, :, :]
        t = np.clip((ap * ab[None]).sum(axis=2) / len2[None], 0.0, 1.0)
        near = a[None] + t[..., None] * ab[None]
        dist = np.hypot(*(chunk[:, None, :] - near).transpose(2, 0, 1))
        d_circle = max(d_circle, float(dist.min(axis=1).max()))
    return max(d_contour, d_circle)


def ball_growth_error(n: int, speed: float = 25.0, horizon: float = 4.0,
                      radius: float = 100.0, extent: float = 1000.0) -> tuple[float, float]:
    """Hausdorff error of the holonomic reach set and the grid spacing used."""
    g = make_grid([0, 0], [extent, extent], [n, n])
    c = (extent / 2, extent / 2)
    target = disc_field(g, c, radius)
    res = solve_hjvi(g, target, None, holonomic_hamiltonian(speed), -horizon, 0.0, SolveOptions())
    return hausdorff_to_circle(res.series.frames[0], c, radius + speed * horizon), g.spacing[0]


@_timed
def check_ball_growth() -> Check:
    """Disc target grown by a 25 m/s holonomic point for 4 s is the 200 m disc."""
    err, h = ball_growth_error(201)
    err2, h2 = ball_growth_error(401)
    ok = err <= 2 * h and err2 <= 0.5 * err
    return Check("analytic.ball_growth", ok, err / h, 2.0,
                 {"hausdorff_m": err, "spacing": float(h), "hausdorff_half_spacing_m": err2,
                  "ratio": err2 / err if err > 0 else 0.0})


def dubins_min_time(n_xy: int = 101, n_theta: int = 36, distance: float = 305.0,
                    target_radius: float = 95.0, reduced: DubinsBounds = REDUCED):
    """Latest departure time for a straight-ahead start ``distance`` from the target edge."""
    from hjspp.rtt import PlanOptions, plan_nominal

    g = make_grid([0, 0, -np.pi], [1000, 1000, np.pi], [n_xy, n_xy, n_theta], [False, False, True])
    center = (750.0, 500.0)
    target = disc_field(g, center, target_radius)
    x0 = np.array([center[0] - target_radius - distance, 500.0, 0.0])
    plan = plan_nominal(x0, 0.0, target, None, reduced, g, PlanOptions(keep_brs=False))
    return plan


@_timed
def check_dubins_min_time() -> Check:
    """Straight-ahead departure 305 m from a 95 m target at 13 m/s top speed."""
    plan = dubins_min_time()
    exact = -305.0 / REDUCED.v_max
    stated = -23.5
    err = abs(plan.ldt - stated)
    tol = 2 * plan.solve_dt
    return Check("analytic.dubins_min_time", err <= tol, err, tol,
                 {"ldt": plan.ldt, "stated_ldt": stated, "exact_ldt": exact,
                  "error_vs_exact": abs(plan.ldt - exact), "solve_dt": plan.solve_dt,
                  "arrival": plan.arrival})


# -- oracle --------------------------------------------------------------------


def _brute_eb(e, p, tracker, reduced, k=5, n_dist=720):
    """``max_u min_{u_r, d}`` of ``p . f_e`` over control lattices (vertices included)."""
    ex, ey, eth = e
    p1, p2, p3 = p
    vs = np.linspace(tracker.v_min, tracker.v_max, k)
    ws = np.linspace(-tracker.omega_max, tracker.omega_max, k)
    vrs = np.linspace(reduced.v_min, reduced.v_max, k)
    wrs = np.linspace(-reduced.omega_max, reduced.omega_max, k)
    ang = np.linspace(0, 2 * np.pi, n_dist, endpoint=False)
    dmin = (tracker.d_max * (p1 * np.cos(ang) + p2 * np.sin(ang))).min()
    tracker_part = (p1 * np.cos(eth) + p2 * np.sin(eth)) * vs[:, None] + p3 * ws[None, :]
    ref_part = -p1 * vrs[:, None] + (p1 * ey - p2 * ex - p3) * wrs[None, :]
    return tracker_part.max() + ref_part.min() + dmin, np.unravel_index(tracker_part.argmax(),
                                                                        tracker_part.shape)


@_timed
def check_ham_eb_oracle(samples: int = 10_000, seed: int = 0) -> Check:
    """Closed-form tracking Hamiltonian against a control-lattice search."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    ctrl_mismatch = 0
    for _ in range(samples):
        e = rng.uniform([-6, -6, -np.pi], [6, 6, np.pi])
        p = rng.uniform(-1, 1, 3)
        val, u, _, _ = ham_eb(e, p, TRACKER, REDUCED)
        brute, (iv, iw) = _brute_eb(e, p, TRACKER, REDUCED)
        worst = max(worst, abs(val - brute))
        q = p[0] * np.cos(e[2]) + p[1] * np.sin(e[2])
        vs = np.linspace(TRACKER.v_min, TRACKER.v_max, 5)
        ws = np.linspace(-TRACKER.omega_max, TRACKER.omega_max, 5)
        if abs(q) > 1e-9 and u.v != vs[iv]:
            ctrl_mismatch += 1
        if abs(p[2]) > 1e-9 and u.omega != ws[iw]:
            ctrl_mismatch += 1
    ok = worst <= 1e-3 and ctrl_mismatch == 0
    return Check("oracle.ham_eb", ok, worst, 1e-3, {"samples": samples, "control_mismatches": ctrl_mismatch})


@_timed
def check_ham_rtt_oracle(samples: int = 10_000, seed: int = 1) -> Check:
    """Closed-form planning Hamiltonian against a control-lattice search."""
    rng = np.random.default_rng(seed)
    vs = np.linspace(REDUCED.v_min, REDUCED.v_max, 5)
    ws = np.linspace(-REDUCED.omega_max, REDUCED.omega_max, 5)
    x = rng.uniform([0, 0, -np.pi], [1000, 1000, np.pi], (samples, 3))
    p = rng.uniform(-1, 1, (samples, 3))
    q = p[:, 0] * np.cos(x[:, 2]) + p[:, 1] * np.sin(x[:, 2])
    brute = (q[:, None, None] * vs[None, :, None] + p[:, 2, None, None] * ws[None, None, :])
    brute = brute.reshape(samples, -1).min(axis=1)
    val, _ = ham_rtt(x.T, p.T, REDUCED)
    worst = float(np.abs(val - brute).max())
    return Check("oracle.ham_rtt", worst <= 1e-3, worst, 1e-3, {"samples": samples})


def brute_signed_distance(occ: np.ndarray, cell: float) -> np.ndarray:
    """Signed distance at cell centres by exhaustive search over cell centres.

    Inside an occupied cell the value is minus the distance to the nearest
    free cell centre, less half a cell; outside, the distance to the nearest
    occupied centre less half a cell, matching the raster convention.
    """
    h, w = occ.shape
    yy, xx = np.mgrid[0:h, 0:w]
    pts = np.column_stack([xx.ravel(), yy.ravel()]).astype(float) * cell
    occ_pts = pts[occ.ravel()]
    free_pts = pts[~occ.ravel()]
    out = np.empty(h * w)
    for i, q in enumerate(pts):
        if occ.ravel()[i]:
            d = np.hypot(*(free_pts - q).T).min() if len(free_pts) else np.inf
            out[i] = -(d - cell / 2)
        else:
            d = np.hypot(*(occ_pts - q).T).min() if len(occ_pts) else np.inf
            out[i] = d - cell / 2
    return out.reshape(h, w)


@_timed
def check_distance_transform_oracle(trials: int = 3, seed: int = 2) -> Check:
    """Mask distance transform against exhaustive search on random 64x64 masks."""
    from hjspp.scenario_io import ObstacleMask, mask_signed_distance

    rng = np.random.default_rng(seed)
    cell = 10.0
    worst = 0.0
    for _ in range(trials):
        occ = rng.random((64, 64)) < rng.uniform(0.02, 0.2)
        mask = ObstacleMask(occ, (0.0, 0.0), cell)
        got = mask_signed_distance(mask)
        want = brute_signed_distance(occ, cell)[::-1].T  # raster rows -> [ix, iy]
        worst = max(worst, float(np.abs(got - want).max()) if got.shape == want.shape else np.inf)
    return Check("oracle.distance_transform", worst <= 1e-9, worst, cell,
                 {"trials": trials, "cell_size": cell})


# -- invariants ----------------------------------------------------------------


@_timed
def check_set_algebra() -> Check:
    g = make_grid([0, 0, -np.pi], [100, 100, np.pi], [41, 41, 12], [False, False, True])
    a = disc_field(g, (40, 50), 20)
    b = disc_field(g, (60, 50), 20)
    errs = {
        "de_morgan": float(np.abs(set_complement(set_union(a, b)).values
                                  - set_intersect(set_complement(a), set_complement(b)).values).max()),
        "dilate_erode": float(np.abs(erode(dilate(a, 5), 5).values - a.values).max()),
        "projection": float(np.abs(project_min(a, 2).values - a.values[..., 0]).max()),
        "theta_independent": float(np.ptp(a.values, axis=2).max()),
    }
    worst = max(errs.values())
    return Check("invariants.set_algebra", worst <= 1e-12, worst, 1e-12, errs)


@_timed
def check_reach_monotone() -> Check:
    """Reach sets grow with the horizon and values stay finite."""
    g = make_grid([0, 0], [1000, 1000], [81, 81])
    target = disc_field(g, (500, 500), 100)
    res = solve_hjvi(g, target, None, holonomic_hamiltonian(25.0), -4.0, 0.0, SolveOptions())
    vals = np.stack([f.values for f in res.series.frames])
    growth = float(np.max(vals[:-1] - vals[1:]))
    ok = growth <= 1e-12 and np.isfinite(vals).all()
    return Check("invariants.reach_monotone", ok, growth, 1e-12, {"frames": len(vals)})


@_timed
def check_mask_properties() -> Check:
    """Signed distance of a mask is 1-Lipschitz and mirrors with the mask."""
    from hjspp.scenario_io import ObstacleMask, mask_signed_distance

    rng = np.random.default_rng(3)
    occ = rng.random((48, 40)) < 0.08
    cell = 5.0
    d = mask_signed_distance(ObstacleMask(occ, (0.0, 0.0), cell))
    dm = mask_signed_distance(ObstacleMask(occ[:, ::-1], (0.0, 0.0), cell))
    mirror = float(np.abs(dm[::-1] - d).max())  # raster columns are x
    lip = max(float(np.abs(np.diff(d, axis=0)).max()), float(np.abs(np.diff(d, axis=1)).max())) / cell
    ok = mirror == 0.0 and lip <= 1.0 + 1e-12
    return Check("invariants.mask_properties", ok, lip, 1.0, {"mirror_error": mirror})


@_timed
def check_hamiltonian_bounds(samples: int = 20_000) -> Check:
    """Finite-difference partials of the tracking Hamiltonian stay within its alpha bounds."""
    from hjspp.dynamics import alpha_bounds_eb

    g = make_grid([-6, -6, -np.pi], [6, 6, np.pi], [61, 61, 36], [False, False, True])
    alpha = alpha_bounds_eb(g, TRACKER, REDUCED)
    rng = np.random.default_rng(4)
    e = rng.uniform([-6, -6, -np.pi], [6, 6, np.pi], (samples, 3)).T
    p = rng.uniform(-2, 2, (samples, 3)).T
    h = 1e-6
    worst = 0.0
    for a in range(3):
        dp = np.zeros_like(p)
        dp[a] = h
        slope = np.abs(ham_eb_value(e, p + dp, TRACKER, REDUCED)
                       - ham_eb_value(e, p - dp, TRACKER, REDUCED)) / (2 * h)
        worst = max(worst, float((slope / alpha[a]).max()))
    return Check("invariants.alpha_dominates", worst <= 1.0 + 1e-6, worst, 1.0)


SUITE_CHECKS = {
    "analytic": (check_ball_growth, check_dubins_min_time),
    "oracle": (check_ham_eb_oracle, check_ham_rtt_oracle, check_distance_transform_oracle),
    "invariants": (check_set_algebra, check_reach_monotone, check_mask_properties,
                   check_hamiltonian_bounds),
}


def run_suite(name: str) -> dict:
    """Run one suite and return its JSON-ready summary."""
    if name not in SUITE_CHECKS:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    checks = [fn() for fn in SUITE_CHECKS[name]]
    return {
        "suite": name,
        "passed": all(c.passed for c in checks),
        "checks": [asdict(c) for c in checks],
    }
