"""Regenerate the bundled preset scenarios and their synthetic obstacle masks.

The masks are invented block patterns of comparable character to a dense
downtown (``sf_small``) and a few large no-fly regions (``bay_small``); they
are not derived from any real map.

    python demos/make_presets.py
"""

from pathlib import Path

import numpy as np

from hjspp.scenario_io import ObstacleMask, save_scenario, write_mask

PRESETS = Path(__file__).resolve().parents[1] / "src" / "hjspp" / "presets"

TRACKER = {"v_min": 0.0, "v_max": 25.0, "omega_max": 2.0}
REDUCED = {"v_min": 11.0, "v_max": 13.0, "omega_max": 1.2}


def vehicle(vid, x0, center, sta):
    return {"id": str(vid), "x0": list(x0), "target": {"center": list(center), "radius": 100.0},
            "sta": float(sta), "bounds": TRACKER, "reduced": REDUCED, "d_max": 6.0, "R_EB": 5.0}


def downtown_mask() -> ObstacleMask:
    """100 x 100 cells of 10 m: a grid of towers around a central corridor."""
    occ = np.zeros((100, 100), dtype=bool)
    rng = np.random.default_rng(20)
    for bx in range(30, 70, 12):
        for by in range(18, 84, 12):
            if 44 <= by <= 56:
                continue  # keep an east-west avenue open
            w, h = rng.integers(4, 8, 2)
            occ[100 - (by + h):100 - by, bx:bx + w] = True
    return ObstacleMask(occ, (0.0, 0.0), 10.0)


def regional_mask() -> ObstacleMask:
    """100 x 100 cells of 30 m: three round no-fly regions."""
    yy, xx = np.mgrid[0:100, 0:100]
    occ = np.zeros((100, 100), dtype=bool)
    for cx, cy, r in ((50, 50, 9), (30, 75, 6), (72, 22, 7)):
        occ |= np.hypot(xx - cx, (99 - yy) - cy) <= r
    return ObstacleMask(occ, (0.0, 0.0), 30.0)


def main() -> None:
    PRESETS.mkdir(parents=True, exist_ok=True)
    write_mask(downtown_mask(), PRESETS / "sf_small_mask.pgm")
    write_mask(regional_mask(), PRESETS / "bay_small_mask.pgm")
    starts_y = (300.0, 400.0, 500.0, 600.0, 700.0)
    targets = ((880.0, 150.0), (880.0, 850.0), (850.0, 500.0), (600.0, 880.0), (600.0, 120.0))
    sf = {
        "schema_version": 1,
        "name": "sf_small (synthetic downtown mask, not real map data)",
        "planning_grid": {"mins": [0.0, 0.0], "maxs": [1000.0, 1000.0], "counts": [81, 81, 36]},
        "rc": 10.0,
        "obstacle_mask": {"path": "sf_small_mask.pgm", "origin": [0.0, 0.0], "cell_size": 10.0},
        "solver": {"eb_horizon": 0.5},
        "sim": {"model": "uniform", "seed": 0},
        "vehicles": [vehicle(i + 1, (60.0, y, 0.0), c, -5.0 * i)
                     for i, (y, c) in enumerate(zip(starts_y, targets))],
    }
    save_scenario(sf, PRESETS / "sf_small.json")
    bay = {
        "schema_version": 1,
        "name": "bay_small (synthetic regional mask, not real map data)",
        "planning_grid": {"mins": [0.0, 0.0], "maxs": [3000.0, 3000.0], "counts": [81, 81, 36]},
        "rc": 10.0,
        "obstacle_mask": {"path": "bay_small_mask.pgm", "origin": [0.0, 0.0], "cell_size": 30.0},
        "solver": {"eb_horizon": 0.5},
        "sim": {"model": "uniform", "seed": 0},
        "vehicles": [
            vehicle(1, (200.0, 1500.0, 0.0), (2700.0, 1500.0), 0.0),
            vehicle(2, (2800.0, 1300.0, np.pi), (300.0, 1700.0), -10.0),
            vehicle(3, (1500.0, 200.0, np.pi / 2), (1500.0, 2800.0), -20.0),
            vehicle(4, (200.0, 2700.0, 0.0), (2700.0, 400.0), -30.0),
        ],
    }
    save_scenario(bay, PRESETS / "bay_small.json")
    for name in ("sf_small", "bay_small"):
        print(f"wrote {PRESETS / name}.json")


if __name__ == "__main__":
    main()
