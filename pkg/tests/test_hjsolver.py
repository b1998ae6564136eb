from collections import deque

import numpy as np
import pytest

from hjspp.dynamics import DubinsBounds, eb_hamiltonian, holonomic_hamiltonian, rtt_hamiltonian
from hjspp.gridcore import Field, FieldSeries, disc_field, make_grid, zero_contours
from hjspp.hjsolver import (
    HamiltonianSpec,
    SolveOptions,
    _Stepper,
    converge_invariant,
    earliest_membership,
    one_sided_differences,
    solve_counts,
    solve_hjvi,
)


@pytest.fixture(scope="module")
def plane():
    return make_grid([0, 0], [1000, 1000], [101, 101])


def test_one_sided_differences_open_and_periodic():
    g = make_grid([0], [4], [5])
    v = np.array([0.0, 1.0, 4.0, 9.0, 16.0])
    b, f = one_sided_differences(v, g, 0)
    assert np.allclose(f, [1, 3, 5, 7, 7])
    assert np.allclose(b, [1, 1, 3, 5, 7])
    gp = make_grid([0], [4], [4], [True])
    b, f = one_sided_differences(np.array([0.0, 1.0, 0.0, -1.0]), gp, 0)
    assert np.allclose(f, [1, -1, -1, 1])
    assert np.allclose(b, [1, 1, -1, -1])


def test_ball_grows_at_speed(plane):
    res = solve_hjvi(plane, disc_field(plane, (500, 500), 100), None,
                     holonomic_hamiltonian(25.0), 0.0, 4.0)
    final = res.series.frames[0]
    (line,) = zero_contours(final)
    r = np.hypot(*(line - 500).T)
    assert np.max(np.abs(r - 200)) <= 2 * plane.spacing[0]
    assert res.series.times[0] == pytest.approx(0.0)
    assert res.series.times[-1] == pytest.approx(4.0)


def _graph_reachable(free: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Nodes connected to ``seeds`` through free nodes (8-neighbour moves)."""
    seen = seeds & free
    q = deque(zip(*np.nonzero(seen)))
    n, m = free.shape
    while q:
        i, j = q.popleft()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                a, b = i + di, j + dj
                if 0 <= a < n and 0 <= b < m and free[a, b] and not seen[a, b]:
                    seen[a, b] = True
                    q.append((a, b))
    return seen


def test_annulus_wall_blocks_reach(plane):
    r = np.hypot(plane.mesh[0] - 500, plane.mesh[1] - 500)
    # wall occupying 250 <= r <= 300: signed distance to the annulus
    g = Field(plane, np.maximum(250 - r, r - 300))
    target = disc_field(plane, (500, 500), 100)
    obstacle = FieldSeries([0.0], [g])
    res = solve_hjvi(plane, target, obstacle, holonomic_hamiltonian(25.0), 0.0, 40.0,
                     SolveOptions(store_stride=50))
    # the wall's boundary (g = 0) is shared by both sets, so it counts as free
    oracle = _graph_reachable(g.values >= 0, target.values <= 0)
    assert earliest_membership(res.series, (900, 500)) is None
    assert not oracle[90, 50]
    # every node the solver claims reachable is graph-reachable
    brs = res.series.frames[0].values <= 0
    assert not np.any(brs & ~oracle)
    assert earliest_membership(res.series, (500, 700)) is not None


def test_earliest_membership_examples(plane):
    tf = 10.0
    res = solve_hjvi(plane, disc_field(plane, (500, 500), 100), None,
                     holonomic_hamiltonian(25.0), 0.0, tf)
    assert earliest_membership(res.series, (500, 500)) == pytest.approx(tf)
    t = earliest_membership(res.series, (750, 500))
    # first-order dissipation slows the front by under a cell per crossing;
    # allow one step plus the time to cross one cell
    assert abs(t - (tf - 6.0)) <= res.dt + plane.spacing[0] / 25.0
    assert earliest_membership(res.series, (1000, 1000)) is None
    with pytest.raises(ValueError):
        earliest_membership(res.series, (2000, 0))


def test_obstacle_wins_over_target(plane):
    target = disc_field(plane, (500, 500), 100)
    g = Field(plane, disc_field(plane, (500, 500), 50).values)
    res = solve_hjvi(plane, target, FieldSeries([0.0], [g]), holonomic_hamiltonian(25.0), 0.0, 1.0)
    v = res.series.frames[0].values
    assert np.all(v[g.values <= 0] >= 0)


def test_solver_rejects_bad_inputs(plane):
    target = disc_field(plane, (500, 500), 100)
    with pytest.raises(ValueError):
        solve_hjvi(plane, target, None, holonomic_hamiltonian(25.0), 1.0, 1.0)
    other = make_grid([0, 0], [10, 10], [5, 5])
    with pytest.raises(ValueError):
        solve_hjvi(other, target, None, holonomic_hamiltonian(25.0), 0.0, 1.0)
    with pytest.raises(ValueError):
        SolveOptions(cfl_factor=1.5)
    with pytest.raises(ValueError):
        SolveOptions(derivative_scheme="weno5")


def test_reach_set_grows_monotonically(plane):
    res = solve_hjvi(plane, disc_field(plane, (500, 500), 100), None,
                     holonomic_hamiltonian(25.0), 0.0, 2.0)
    vals = [f.values for f in res.series.frames]
    for early, late in zip(vals, vals[1:]):
        assert np.all(early <= late + 1e-12)


def test_stop_when_ends_early(plane):
    res = solve_hjvi(plane, disc_field(plane, (500, 500), 100), None,
                     holonomic_hamiltonian(25.0), 0.0, 10.0,
                     stop_when=lambda t, v: t < 9.0)
    assert res.stopped_early
    assert 8.5 < res.series.times[0] < 9.0


def test_counts_are_recorded(plane):
    before = solve_counts["solve_hjvi"]
    solve_hjvi(plane, disc_field(plane, (500, 500), 100), None, holonomic_hamiltonian(25.0), 0.0, 0.1)
    assert solve_counts["solve_hjvi"] == before + 1


def _decay_ham(rate):
    # V_tau = H = -rate * |p| shrinks a sub-zero set toward a fixed point quickly on a coarse grid
    return HamiltonianSpec(eval=lambda c, p: -rate * np.abs(p[0]),
                           alpha_bounds=lambda g: np.array([rate]))


def test_converge_invariant_tolerance_monotone():
    g = make_grid([-1], [1], [41])
    target = Field(g, np.abs(g.axis(0)) - 0.5)
    ham = _decay_ham(1.0)
    loose = converge_invariant(g, target, ham, SolveOptions(convergence_tol=1e-2))
    tight = converge_invariant(g, target, ham, SolveOptions(convergence_tol=5e-3))
    assert loose.converged and tight.converged
    assert tight.residual <= loose.residual


def test_converge_invariant_empties_without_authority():
    e_grid = make_grid([-6, -6, -np.pi], [6, 6, np.pi], [25, 25, 16], [False, False, True])
    b = DubinsBounds(11, 13, 1.2, d_max=6.0)
    target = Field(e_grid, 5.0 - np.hypot(e_grid.mesh[0], e_grid.mesh[1]) + 0 * e_grid.mesh[2])
    res = converge_invariant(e_grid, target, eb_hamiltonian(b, b), SolveOptions(max_steps=20000),
                             stop_when=lambda t, v: v.max() <= 0)
    assert res.stopped_early
    assert res.series.frames[-1].values.max() <= 0


def test_converge_invariant_horizon():
    g = make_grid([-1], [1], [41])
    target = Field(g, np.abs(g.axis(0)) - 0.5)
    res = converge_invariant(g, target, _decay_ham(1.0), SolveOptions(convergence_tol=1e-12),
                             horizon=0.05)
    assert res.stats["horizon_reached"] and not res.converged
    assert res.steps * res.dt == pytest.approx(0.05, abs=res.dt)
    with pytest.raises(ValueError):
        converge_invariant(g, target, _decay_ham(1.0), horizon=0.0)


@pytest.mark.parametrize("which", ["eb", "rtt"])
def test_fused_kernels_match_generic(monkeypatch, which):
    g = make_grid([-6, -6, -np.pi], [6, 6, np.pi], [13, 11, 12], [False, False, True])
    tracker = DubinsBounds(0, 25, 2.0, d_max=6.0)
    reduced = DubinsBounds(11, 13, 1.2)
    ham = eb_hamiltonian(tracker, reduced) if which == "eb" else rtt_hamiltonian(reduced)
    v = np.random.default_rng(3).normal(size=g.shape)
    monkeypatch.delenv("HJSPP_NO_JIT", raising=False)
    fused = _Stepper(g, ham, SolveOptions())
    assert fused._fused is not None
    monkeypatch.setenv("HJSPP_NO_JIT", "1")
    generic = _Stepper(g, ham, SolveOptions())
    assert generic._fused is None
    assert np.allclose(fused.rate(v), generic.rate(v), rtol=1e-12, atol=1e-9)
