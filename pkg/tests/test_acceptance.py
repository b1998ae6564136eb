"""Acceptance criteria, one PASS/FAIL line each (repeated in the terminal summary).

Tolerances are pinned here and never relaxed to make a criterion pass; a
criterion the implementation cannot meet fails with its measured numbers.
"""

import time

import numpy as np
import pytest
from conftest import record_criterion, vehicle

from hjspp import verify
from hjspp.dynamics import DubinsBounds
from hjspp.gridcore import make_grid
from hjspp.planner import ErrorBoundCache, plan_all, validate_plan
from hjspp.rtt import ErrorBoundInfeasible, compute_error_bound
from hjspp.scenario_io import build_scenario
from hjspp.sim import DisturbanceModel, safety_report, simulate

TRACKER_6 = DubinsBounds(0.0, 25.0, 2.0, d_max=6.0)
TRACKER_11 = DubinsBounds(0.0, 25.0, 2.0, d_max=11.0)
REDUCED = DubinsBounds(11.0, 13.0, 1.2)
RC = 10.0
GUARANTEE_EB_HORIZON = 0.5  # seconds; see the README on finite-horizon error bounds
PI = np.pi

pytestmark = pytest.mark.slow


# -- 1 -------------------------------------------------------------------------------


def test_criterion_1_analytic_brs():
    t0 = time.perf_counter()
    err, h = verify.ball_growth_error(201)
    elapsed = time.perf_counter() - t0
    err_half, _ = verify.ball_growth_error(401)
    ok = err <= 2 * h and err_half <= 0.5 * err and elapsed < 30.0
    record_criterion(1, "analytic BRS", ok,
                     f"Hausdorff {err:.3f} m = {err / h:.2f} cells (tol 2 cells) on 201x201, "
                     f"{err_half:.3f} m on 401x401 (ratio {err_half / err:.3f}, need <= 0.5), "
                     f"runtime {elapsed:.1f} s (tol 30 s)")
    assert ok


# -- 2 -------------------------------------------------------------------------------


def test_criterion_2_dubins_min_time():
    t0 = time.perf_counter()
    plan = verify.dubins_min_time()
    elapsed = time.perf_counter() - t0
    stated = -23.5
    exact = -305.0 / 13.0
    tol = 2 * plan.solve_dt
    err = abs(plan.ldt - stated)
    # rollout oracle: the nominal run cannot beat the straight line at top speed
    travel = plan.arrival - plan.ldt
    rollout_ok = travel >= 305.0 / 13.0 - plan.dt_traj and plan.arrival <= plan.sta + 1e-9
    ok = err <= tol and rollout_ok and elapsed < 120.0
    record_criterion(2, "Dubins min-time", ok,
                     f"ldt {plan.ldt:.3f} s vs {stated} s: error {err:.3f} s, tol 2 steps = {tol:.3f} s "
                     f"(exact {exact:.3f}, error {abs(plan.ldt - exact):.3f} s); rollout travel "
                     f"{travel:.2f} s, arrival {plan.arrival:.3f} <= sta 0; runtime {elapsed:.1f} s. "
                     "First-order dissipation delays the front by about one 10 m cell")
    assert ok


# -- 3 -------------------------------------------------------------------------------


def _paper_error_bound(tracker, R_EB):
    r = 1.2 * R_EB
    g = make_grid([-r, -r, -PI], [r, r, PI], [61, 61, 36], [False, False, True])
    t0 = time.perf_counter()
    try:
        eb = compute_error_bound(tracker, REDUCED, R_EB, g)
    except ErrorBoundInfeasible as exc:
        return None, str(exc), time.perf_counter() - t0
    return eb, None, time.perf_counter() - t0


def test_criterion_3_error_bound():
    eb, failure, elapsed = _paper_error_bound(TRACKER_6, 5.0)
    if eb is None:
        ok = False
        detail = (f"infinite-horizon iteration on 61x61x36: {failure}; runtime {elapsed:.1f} s. "
                  "The first-order Lax-Friedrichs scheme drains the invariant set wherever the "
                  "reference turn and disturbance terms act, leaving no nonempty discrete fixed point")
    else:
        ok = (eb.converged and eb.residual < 1e-3 * eb.dt and eb.contains((0, 0, 0))
              and eb.radius_pos <= 5.0 and elapsed < 300.0)
        detail = (f"converged={eb.converged}, residual/dt {eb.residual / eb.dt:.2e} (tol 1e-3), "
                  f"radius_pos {eb.radius_pos:.3f} m (tol 5), runtime {elapsed:.1f} s")
    record_criterion(3, "error bound (d_max 6, R_EB 5)", ok, detail)
    assert ok


def test_criterion_3_large_disturbance():
    eb, failure, elapsed = _paper_error_bound(TRACKER_11, 35.0)
    ok = eb is not None and eb.contains((0, 0, 0))
    detail = (f"Omega nonempty, radius_pos {eb.radius_pos:.2f} m" if ok
              else f"{failure}; runtime {elapsed:.1f} s")
    record_criterion("3b", "error bound (d_max 11, R_EB 35)", ok, detail)
    assert ok


# -- 4 -------------------------------------------------------------------------------


def _scenario_doc(vehicles):
    return {
        "schema_version": 1,
        "planning_grid": {"mins": [0, 0], "maxs": [1000, 1000], "counts": [81, 81, 36]},
        "rc": RC,
        "solver": {"eb_horizon": GUARANTEE_EB_HORIZON},
        "vehicles": vehicles,
    }


def _shared(stagger):
    return [vehicle(str(i + 1), (80, 200 + 200 * i, 0), (850, 500), 100, sta=stagger * i)
            for i in range(4)]


SCENARIOS = {
    "head_on": [
        vehicle("1", (80, 500, 0), (880, 500), 100),
        vehicle("2", (920, 500, PI), (120, 500), 100),
        vehicle("3", (80, 560, 0), (880, 440), 100, sta=3.0),
    ],
    "crossing": [
        vehicle("1", (80, 500, 0), (880, 500), 100),
        vehicle("2", (500, 80, PI / 2), (500, 880), 100),
        vehicle("3", (920, 500, PI), (120, 500), 100),
        vehicle("4", (500, 920, -PI / 2), (500, 120), 100),
    ],
    "shared_stagger_0": _shared(0.0),
    "shared_stagger_5": _shared(5.0),
    "shared_stagger_10": _shared(10.0),
}

_plans: dict = {}
_timings: dict = {}
_eb_cache = ErrorBoundCache()


def _planned(name):
    if name not in _plans:
        t0 = time.perf_counter()
        scenario = build_scenario(_scenario_doc(SCENARIOS[name]))
        _plans[name] = (scenario, plan_all(scenario, eb_cache=_eb_cache))
        _timings[name] = time.perf_counter() - t0
    return _plans[name]


def _models(d_max):
    models = [DisturbanceModel("uniform", d_max, seed=s) for s in range(100)]
    models.append(DisturbanceModel("worst_case", d_max))
    models.append(DisturbanceModel("constant", d_max, vector=(-d_max, 0.0)))
    return models


_guarantee_results: dict = {}


@pytest.mark.parametrize("name", list(SCENARIOS))
def test_criterion_4_guarantees(name):
    scenario, mp = _planned(name)
    if not mp.ok:
        _guarantee_results[name] = False
        record_criterion(f"4/{name}", "guarantees", False, f"planning failed: {mp.failure}")
        pytest.fail(f"planning failed: {mp.failure}")
    t0 = time.perf_counter()
    trace = simulate(mp, scenario, _models(6.0), record=False)
    _timings[name] += time.perf_counter() - t0
    report = safety_report(trace, scenario)
    m = trace.metrics
    sep = float(m["min_pairwise_distance"].min())
    err_ratio = float((m["max_error_norm"] / m["radius_pos"]).max())
    late = bool(np.any(m["arrival_time"] > m["sta"] + 1e-9))
    outside = bool(np.any(m["arrival_distance"] > m["target_radius"]))
    static_hits = int(np.sum(m["static_min_value"] <= 0))
    plan_ok = validate_plan(mp, scenario)["pass"]
    ok = (report["violation_count"] == 0 and sep >= RC and err_ratio <= 1.0 and not late
          and not outside and static_hits == 0 and plan_ok)
    _guarantee_results[name] = ok
    record_criterion(
        f"4/{name}", "guarantees", ok,
        f"{len(mp.vehicles)} vehicles x {len(trace.models)} runs: (a) min separation {sep:.2f} m "
        f">= {RC}; (b) max error/radius_pos {err_ratio:.3f} <= 1 "
        f"(max error {float(m['max_error_norm'].max()):.2f} m, radius_pos {float(m['radius_pos'].max()):.2f} m); "
        f"(c) late={late} outside={outside}; (d) static entries {static_hits}; "
        f"violations {report['violation_count']}; {_timings[name]:.0f} s. "
        f"Error bound is the {GUARANTEE_EB_HORIZON} s finite-horizon set")
    assert ok


def test_criterion_4_summary():
    total = sum(_timings.get(n, np.inf) for n in SCENARIOS)
    ok = all(_guarantee_results.get(n, False) for n in SCENARIOS) and total < 600.0
    record_criterion(4, "guarantee suite", ok,
                     f"{sum(_guarantee_results.values())}/{len(SCENARIOS)} scenarios clean, "
                     f"total {total:.0f} s (tol 600 s); uses finite-horizon ({GUARANTEE_EB_HORIZON} s) "
                     "error bounds, not a converged invariant set")
    assert ok


# -- 5 -------------------------------------------------------------------------------


def _lanes(n):
    return {
        "schema_version": 1,
        "planning_grid": {"mins": [0, 0], "maxs": [600, 600], "counts": [61, 61, 24]},
        "error_grid": {"mins": [-6, -6], "maxs": [6, 6], "counts": [31, 31, 24]},
        "rc": RC,
        "solver": {"eb_horizon": GUARANTEE_EB_HORIZON},
        "vehicles": [vehicle(str(k + 1), (40, 60 + 95 * k, 0), (520, 60 + 95 * k), 40)
                     for k in range(n)],
    }


def test_criterion_5_decoupling_and_scaling():
    counts = {}
    for n in range(1, 7):
        mp = plan_all(build_scenario(_lanes(n)))
        counts[n] = (mp.ok, mp.stats["planning_solves"], mp.stats["error_bound_solves"])
    linear = all(ok and p == n and e <= n for n, (ok, p, e) in counts.items())

    base = _lanes(3)
    edited = _lanes(3)
    edited["vehicles"][1]["sta"] = 8.0
    edited["vehicles"][2]["x0"] = [40, 300, 0.5]
    edited["vehicles"].append(vehicle("9", (560, 100, PI), (80, 100), 40))
    a = plan_all(build_scenario(base)).vehicles[0]
    b = plan_all(build_scenario(edited)).vehicles[0]
    invariant = (np.array_equal(a.plan.nominal.states, b.plan.nominal.states)
                 and np.array_equal(a.plan.nominal.controls, b.plan.nominal.controls)
                 and a.plan.ldt == b.plan.ldt)
    ok = linear and invariant
    record_criterion(5, "priority decoupling and linear scaling", ok,
                     "solves (planning, error bound) for N=1..6: "
                     + ", ".join(f"{n}:({p},{e})" for n, (_, p, e) in counts.items())
                     + f"; leader plan bitwise invariant to lower-priority edits: {invariant}")
    assert ok


# -- 6 -------------------------------------------------------------------------------


def test_criterion_6_oracles():
    res = verify.run_suite("oracle")
    checks = {c["name"]: c for c in res["checks"]}
    eb, rtt, dt = checks["oracle.ham_eb"], checks["oracle.ham_rtt"], checks["oracle.distance_transform"]
    ok = res["passed"] and eb["value"] <= 1e-3 and rtt["value"] <= 1e-3 and dt["value"] <= dt["tolerance"]
    record_criterion(6, "oracle equivalence", ok,
                     f"ham_eb worst {eb['value']:.2e} (tol 1e-3, {eb['detail']['samples']} samples), "
                     f"ham_rtt worst {rtt['value']:.2e} (tol 1e-3), distance transform worst "
                     f"{dt['value']:.2e} m on 64x64 masks (tol one cell = {dt['tolerance']:g} m)")
    assert ok


# -- 7 -------------------------------------------------------------------------------


def mean_path_separation(mp, step: float = 0.5) -> float:
    """Mean over vehicle pairs of the mean spatial distance from one nominal path to the other.

    Time is ignored: two vehicles using the same lane at different times
    count as close.
    """
    paths = []
    for vp in mp.vehicles:
        nom = vp.plan.nominal
        t = np.arange(nom.times[0], nom.times[-1], step)
        paths.append(nom.state_at(t)[:, :2])
    vals = []
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            d = np.hypot(*(paths[i][:, None, :] - paths[j][None, :, :]).transpose(2, 0, 1))
            vals.append(0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()))
    return float(np.mean(vals))


def test_criterion_7_lane_emergence_report():
    seps = {}
    for s in (0, 5, 10):
        _, mp = _planned(f"shared_stagger_{s}")
        seps[s] = mean_path_separation(mp) if mp.ok else float("nan")
    trend = seps[10] < seps[0]
    record_criterion(7, "lane emergence", trend,
                     "mean pairwise nominal-path separation by sta stagger: "
                     + ", ".join(f"{s} s: {v:.1f} m" for s, v in seps.items())
                     + f"; decreases from 0 to 10 s: {trend}", soft=True)
