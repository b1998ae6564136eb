import copy
import dataclasses

import numpy as np
import pytest
from conftest import head_on_doc, small_doc, vehicle

from hjspp.gridcore import disc_field
from hjspp.planner import (
    ErrorBoundCache,
    MultiPlan,
    plan_all,
    presence_window,
    read_run,
    validate_plan,
    write_run,
)
from hjspp.rtt import compute_error_bound, plan_nominal, shrink_target
from hjspp.scenario_io import build_scenario


def test_single_vehicle_matches_direct_pipeline(single_scenario, single_plan):
    spec = single_scenario.vehicles[0]
    eb = compute_error_bound(spec.tracker, spec.reduced, spec.R_EB, single_scenario.error_grid,
                             single_scenario.eb_solver, horizon=single_scenario.eb_horizon)
    target = shrink_target(single_scenario.target_field(spec), eb.radius_pos)
    direct = plan_nominal(np.asarray(spec.x0), spec.sta, target, None, spec.reduced,
                          single_scenario.planning_grid, single_scenario.plan_options)
    vp = single_plan.vehicles[0]
    assert np.array_equal(vp.error_bound.value.values, eb.value.values)
    assert vp.plan.ldt == direct.ldt
    assert np.array_equal(vp.plan.nominal.states, direct.nominal.states)


def test_head_on_pair_keeps_separation(head_on_scenario, head_on_plan):
    a, b = head_on_plan.vehicles
    t = np.arange(max(a.plan.ldt, b.plan.ldt), min(a.plan.arrival, b.plan.arrival), 0.05)
    pa, pb = a.plan.nominal.state_at(t), b.plan.nominal.state_at(t)
    d = np.hypot(*(pa[:, :2] - pb[:, :2]).T)
    assert d.min() >= head_on_scenario.rc + a.radius_pos + b.radius_pos
    # the second vehicle leaves the straight line to get around the first
    assert np.max(np.abs(b.plan.nominal.states[:, 1] - 200.0)) > 20.0


def test_validation_passes_on_fresh_plan(head_on_scenario, head_on_plan):
    report = validate_plan(head_on_plan, head_on_scenario)
    assert report["pass"]
    assert report["vehicles"]["2"]["separation"]["worst_pair"] == "1"


def test_validation_with_tighter_rc_fails(head_on_scenario, head_on_plan):
    margin = validate_plan(head_on_plan, head_on_scenario)["vehicles"]["1"]["separation"]["min_margin"]
    report = validate_plan(head_on_plan, head_on_scenario, rc=head_on_scenario.rc + margin + 1.0)
    assert not report["vehicles"]["1"]["separation"]["pass"]
    assert report["vehicles"]["1"]["arrival"]["pass"]


def test_validation_fault_injection(single_plan, single_scenario):
    g = single_scenario.planning_grid
    blocker = dataclasses.replace(single_scenario, static_obstacles=disc_field(g, (200, 380), 15))
    vp = single_plan.vehicles[0]
    assert validate_plan(single_plan, blocker)["pass"]
    states = vp.plan.nominal.states.copy()
    states[len(states) // 2, :2] = (200, 380)
    nominal = dataclasses.replace(vp.plan.nominal, states=states)
    bad_plan = dataclasses.replace(vp.plan, nominal=nominal)
    bad = MultiPlan([dataclasses.replace(vp, plan=bad_plan)])
    checks = validate_plan(bad, blocker)["vehicles"]["1"]
    assert not checks["obstacle_clearance"]["pass"]
    assert checks["arrival"]["pass"] and checks["controls"]["pass"] and checks["separation"]["pass"]


def test_planning_is_deterministic(head_on_plan):
    again = plan_all(build_scenario(head_on_doc()))
    for a, b in zip(head_on_plan.vehicles, again.vehicles):
        assert np.array_equal(a.plan.nominal.states, b.plan.nominal.states)
        assert a.plan.ldt == b.plan.ldt


def test_leader_invariant_to_lower_priority_edits(head_on_plan):
    doc = head_on_doc()
    doc["vehicles"][1]["sta"] = 12.0
    doc["vehicles"][1]["x0"] = [360, 120, 2.5]
    doc["vehicles"].append(vehicle("3", (200, 40, np.pi / 2), (200, 360)))
    edited = plan_all(build_scenario(doc))
    a, b = head_on_plan.vehicles[0], edited.vehicles[0]
    assert np.array_equal(a.plan.nominal.states, b.plan.nominal.states)
    assert np.array_equal(a.plan.nominal.controls, b.plan.nominal.controls)
    assert a.plan.ldt == b.plan.ldt


def test_solve_counts_scale_linearly(head_on_plan, single_plan):
    assert single_plan.stats == {"planning_solves": 1, "error_bound_solves": 1}
    assert head_on_plan.stats == {"planning_solves": 2, "error_bound_solves": 1}
    cache = ErrorBoundCache()
    s = build_scenario(head_on_doc())
    plan_all(s, eb_cache=cache)
    again = plan_all(s, eb_cache=cache)
    assert again.stats["error_bound_solves"] == 0


def test_target_too_small_fails_cleanly():
    doc = small_doc([vehicle("1", (60, 200, 0), (330, 200), radius=4.0)])
    mp = plan_all(build_scenario(doc))
    assert not mp.ok
    assert mp.failure["stage"] == "target" and mp.vehicles == []


def test_failure_halts_lower_priorities():
    doc = small_doc([
        vehicle("1", (60, 200, 0), (330, 200)),
        vehicle("2", (60, 100, 0), (330, 100), radius=3.0),
        vehicle("3", (60, 300, 0), (330, 300)),
    ])
    mp = plan_all(build_scenario(doc))
    assert [vp.spec.id for vp in mp.vehicles] == ["1"]
    assert mp.failure["vehicle"] == "2"


def test_presence_window(head_on_plan):
    vp = head_on_plan.vehicles[0]
    assert presence_window(vp) == (vp.plan.ldt, max(vp.plan.sta, vp.plan.arrival))
    assert presence_window(vp, occupy_after_arrival=True)[1] == np.inf


def test_run_roundtrip(tmp_path, head_on_scenario, head_on_plan):
    write_run(tmp_path, head_on_plan, scenario_doc=head_on_doc())
    for name in ("report.json", "scenario.json", "plans/vehicle_1.csv",
                 "obstacles/2/index.csv", "obstacles/2/discs.json", "error_bounds/eb_0.csv"):
        assert (tmp_path / name).exists(), name
    assert not (tmp_path / "error_bounds" / "eb_1.csv").exists()
    back = read_run(tmp_path, head_on_scenario)
    for a, b in zip(head_on_plan.vehicles, back.vehicles):
        assert np.array_equal(a.plan.nominal.states, b.plan.nominal.states)
        assert a.radius_pos == pytest.approx(b.radius_pos)
        assert b.error_bound.horizon == 0.5
        assert np.array_equal(a.induced.at(3.0), b.induced.at(3.0))
    assert validate_plan(back, head_on_scenario)["pass"]


def test_scenario_rejects_bad_vehicles(single_doc):
    doc = copy.deepcopy(single_doc)
    doc["vehicles"].append(copy.deepcopy(doc["vehicles"][0]))
    with pytest.raises(ValueError):
        build_scenario(doc)
