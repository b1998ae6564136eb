"""Shared fixtures: small scenarios that plan in seconds."""

from __future__ import annotations

import copy

import numpy as np
import pytest

from hjspp.planner import plan_all
from hjspp.scenario_io import build_scenario

PAPER_BOUNDS = {"v_min": 0.0, "v_max": 25.0, "omega_max": 2.0}
PAPER_REDUCED = {"v_min": 11.0, "v_max": 13.0, "omega_max": 1.2}


def vehicle(vid, x0, center, radius=60.0, sta=0.0, d_max=6.0, R_EB=5.0):
    return {"id": vid, "x0": list(x0), "target": {"center": list(center), "radius": radius},
            "sta": sta, "bounds": dict(PAPER_BOUNDS), "reduced": dict(PAPER_REDUCED),
            "d_max": d_max, "R_EB": R_EB}


def small_doc(vehicles, size=400.0, counts=(41, 41, 24), error_counts=(31, 31, 24), **extra):
    r = 6.0
    doc = {
        "schema_version": 1,
        "name": "test",
        "planning_grid": {"mins": [0, 0], "maxs": [size, size], "counts": list(counts)},
        "error_grid": {"mins": [-r, -r], "maxs": [r, r], "counts": list(error_counts)},
        "rc": 10.0,
        "solver": {"eb_horizon": 0.5},
        "vehicles": vehicles,
    }
    doc.update(extra)
    return doc


def head_on_doc(sta=0.0):
    return small_doc([
        vehicle("1", (40, 200, 0), (360, 200), sta=sta),
        vehicle("2", (360, 200, np.pi), (40, 200), sta=sta),
    ])


@pytest.fixture(scope="session")
def single_doc():
    return small_doc([vehicle("1", (60, 200, 0), (330, 200))])


@pytest.fixture(scope="session")
def single_scenario(single_doc):
    return build_scenario(copy.deepcopy(single_doc))


@pytest.fixture(scope="session")
def single_plan(single_scenario):
    mp = plan_all(single_scenario)
    assert mp.ok, mp.failure
    return mp


@pytest.fixture(scope="session")
def head_on_scenario():
    return build_scenario(head_on_doc())


@pytest.fixture(scope="session")
def head_on_plan(head_on_scenario):
    mp = plan_all(head_on_scenario)
    assert mp.ok, mp.failure
    return mp


# -- acceptance reporting -----------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, name: str, passed: bool, detail: str, soft: bool = False) -> str:
    """Store one ``PASS``/``FAIL`` line; all lines are repeated in the terminal summary."""
    status = ("PASS" if passed else "FAIL") + (" (report-only)" if soft else "")
    line = f"{status} criterion {number} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
