"""How the tracking-error set behaves on a grid.

For the standard vehicle class (tracker speed 0..25 m/s, turn 2 rad/s, wind
up to 6 m/s; planner 11..13 m/s, 1.2 rad/s) the set of errors the tracker
can hold inside a 5 m disc is computed by stepping the error game backward.
On a uniform grid with a first-order scheme this iteration slowly loses
value everywhere, so the set shrinks to nothing instead of settling. The
script prints how long the set survives, and what the finite-horizon sets
used by the presets look like.

Run from the repository root::

    python demos/error_bound_study.py
"""

import time

import numpy as np

from hjspp.dynamics import DubinsBounds
from hjspp.gridcore import make_grid
from hjspp.rtt import ErrorBoundInfeasible, compute_error_bound

TRACKER = DubinsBounds(0.0, 25.0, 2.0, d_max=6.0)
REDUCED = DubinsBounds(11.0, 13.0, 1.2)


def error_grid(n=61, nt=36, half=6.0):
    return make_grid([-half, -half, -np.pi], [half, half, np.pi], [n, n, nt], [False, False, True])


def main():
    g = error_grid()
    t0 = time.perf_counter()
    try:
        eb = compute_error_bound(TRACKER, REDUCED, 5.0, g)
        print(f"converged: radius_pos {eb.radius_pos:.2f} m")
    except ErrorBoundInfeasible as exc:
        print(f"infinite horizon: {exc} ({time.perf_counter() - t0:.1f} s)")

    print("\nfinite horizons (seconds of backward integration):")
    for horizon in (0.25, 0.5, 0.75, 1.0):
        try:
            eb = compute_error_bound(TRACKER, REDUCED, 5.0, g, horizon=horizon)
        except ErrorBoundInfeasible:
            print(f"  {horizon:4.2f} s: empty")
            continue
        inside = (eb.omega_field.values < 0).mean()
        print(f"  {horizon:4.2f} s: value at zero error {eb.value.values.max():.2f}, "
              f"radius_pos {eb.radius_pos:.2f} m, {100 * inside:.0f}% of the grid inside")

    print("\nwithout wind the loss is slower but still present:")
    calm = DubinsBounds(0.0, 25.0, 2.0, d_max=0.0)
    for horizon in (1.0, 5.0):
        eb = compute_error_bound(calm, REDUCED, 5.0, g, horizon=horizon)
        print(f"  {horizon:4.1f} s: value at zero error {eb.value.values.max():.2f}")


if __name__ == "__main__":
    main()
