"""Scenario files and obstacle masks.

A scenario is a JSON document (``schema_version`` 1)::

    {
      "schema_version": 1,
      "name": "optional label",
      "planning_grid": {"mins": [x0, y0], "maxs": [x1, y1], "counts": [nx, ny, ntheta]},
      "error_grid": {"mins": [...], "maxs": [...], "counts": [...]},      # optional
      "rc": 10.0,
      "obstacle_mask": {"path": "mask.pgm", "origin": [x, y], "cell_size": 10.0},  # optional
      "occupy_after_arrival": false,
      "solver": {...},                                                     # optional
      "sim": {"model": "uniform", "seed": 0, "dt": null, "constant": [dx, dy]},  # optional
      "vehicles": [
        {"id": "1", "x0": [x, y, theta], "target": {"center": [x, y], "radius": r},
         "sta": 0.0, "bounds": {"v_min": 0, "v_max": 25, "omega_max": 2},
         "reduced": {"v_min": 11, "v_max": 13, "omega_max": 1.2}, "d_max": 6, "R_EB": 5}
      ]
    }

Grid blocks may give ``mins``/``maxs`` for the position axes only; the
heading axis then spans ``[-pi, pi)`` and is periodic. ``periodic`` may be
given explicitly (position axes must not be periodic). The error grid
defaults to ``[-1.2 R, 1.2 R]^2 x [-pi, pi)`` with ``61 x 61 x 36`` nodes,
``R`` being the largest ``R_EB``. Unknown keys are rejected everywhere.

Solver keys (all optional): ``cfl_factor`` (0.5), ``time_integrator``
("tvd_rk2"), ``convergence_tol`` (1e-3), ``eb_max_steps`` (200000),
``plan_store_stride`` (4), ``dt_traj`` (null: the planning CFL step),
``horizon`` (null: three grid diagonals at the slowest reduced speed),
``eb_horizon`` (null: iterate the tracking-error game to convergence; a
number of seconds accepts the finite-horizon set instead, which carries no
invariance certificate).

Obstacle masks are binary rasters: PGM (P5, 0 = occupied, 255 = free) or CSV
of 0/1 (1 = occupied). Row 0 is the northern (largest ``y``) row and
``origin`` is the south-west corner of the raster. Relative mask paths are
resolved against the scenario file's directory.
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from hjspp.dynamics import DubinsBounds, VehicleState
from hjspp.gridcore import EMPTY, Field, Grid, make_grid
from hjspp.hjsolver import SolveOptions
from hjspp.planner import Scenario, VehicleSpec
from hjspp.rtt import PlanOptions

SCHEMA_VERSION = 1
PRESETS = ("sf_small.json", "bay_small.json")

_TOP_KEYS = {"schema_version", "name", "planning_grid", "error_grid", "rc", "obstacle_mask",
             "occupy_after_arrival", "solver", "sim", "vehicles"}
_GRID_KEYS = {"mins", "maxs", "counts", "periodic"}
_MASK_KEYS = {"path", "origin", "cell_size"}
_SOLVER_DEFAULTS = {"cfl_factor": 0.5, "time_integrator": "tvd_rk2", "convergence_tol": 1e-3,
                    "eb_max_steps": 200_000, "plan_store_stride": 4, "dt_traj": None,
                    "horizon": None, "eb_horizon": None}
_SIM_DEFAULTS = {"model": "uniform", "seed": 0, "dt": None, "constant": None}
_VEHICLE_KEYS = {"id", "x0", "target", "sta", "bounds", "reduced", "d_max", "R_EB"}
_BOUNDS_KEYS = {"v_min", "v_max", "omega_max"}
_DEFAULT_ERROR_COUNTS = [61, 61, 36]


class ScenarioError(ValueError):
    """Invalid scenario; ``path`` names the offending field (e.g. ``vehicles[1].sta``)."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# -- obstacle masks ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObstacleMask:
    """Binary occupancy raster; ``occupancy[0]`` is the northern row."""

    occupancy: np.ndarray
    origin: tuple[float, float]
    cell_size: float

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 2 or occ.size == 0:
            raise ValueError("occupancy must be a non-empty 2-D array")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        object.__setattr__(self, "occupancy", occ)

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """``(x_min, x_max, y_min, y_max)`` of the raster footprint."""
        x0, y0 = self.origin
        return x0, x0 + self.width * self.cell_size, y0, y0 + self.height * self.cell_size


def read_mask(path, origin, cell_size) -> ObstacleMask:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        rows = [[int(c) for c in r] for r in csv.reader(path.open()) if r]
        occ = np.array(rows)
        if not np.isin(occ, (0, 1)).all():
            raise ValueError(f"{path}: CSV masks may contain only 0 and 1")
        occ = occ == 1
    else:
        from PIL import Image

        with Image.open(path) as im:
            arr = np.array(im.convert("L"))
        occ = arr < 128
    return ObstacleMask(occ, tuple(float(v) for v in origin), float(cell_size))


def write_mask(mask: ObstacleMask, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerows(mask.occupancy.astype(int).tolist())
        return
    from PIL import Image

    Image.fromarray(np.where(mask.occupancy, 0, 255).astype(np.uint8), mode="L").save(path)


def mask_signed_distance(mask: ObstacleMask) -> np.ndarray:
    """Signed distance sampled at cell centres, indexed ``[ix, iy]`` (x east, y north).

    Free cells get the distance between centres to the nearest occupied cell
    minus half a cell; occupied cells get minus the distance to the nearest
    free cell, again less half a cell. Both use an exact Euclidean distance
    transform.
    """
    from scipy import ndimage

    occ = mask.occupancy[::-1].T  # [ix, iy]
    cs = mask.cell_size
    if not occ.any():
        return np.full(occ.shape, EMPTY)
    if occ.all():
        return np.full(occ.shape, -EMPTY)
    d_out = ndimage.distance_transform_edt(~occ) * cs
    d_in = ndimage.distance_transform_edt(occ) * cs
    return np.where(occ, -(d_in - 0.5 * cs), d_out - 0.5 * cs)


def mask_to_field(mask: ObstacleMask, grid: Grid) -> Field:
    """Obstacle field on ``grid``: signed distance of the mask, resampled bilinearly and
    extruded over the remaining axes. An all-free mask gives ``EMPTY`` everywhere."""
    from scipy import ndimage

    x_lo, x_hi, y_lo, y_hi = mask.extent
    tol = 1e-9 * max(1.0, abs(x_hi), abs(y_hi))
    if (grid.mins[0] < x_lo - tol or grid.maxs[0] > x_hi + tol
            or grid.mins[1] < y_lo - tol or grid.maxs[1] > y_hi + tol):
        raise ValueError(
            f"mask footprint x[{x_lo}, {x_hi}] y[{y_lo}, {y_hi}] does not cover the grid "
            f"x[{grid.mins[0]}, {grid.maxs[0]}] y[{grid.mins[1]}, {grid.maxs[1]}]"
        )
    sd = mask_signed_distance(mask)
    cs = mask.cell_size
    gx, gy = np.meshgrid(grid.axis(0), grid.axis(1), indexing="ij")
    u = (gx - mask.origin[0]) / cs - 0.5
    v = (gy - mask.origin[1]) / cs - 0.5
    plane = ndimage.map_coordinates(sd, [u, v], order=1, mode="nearest")
    shape = grid.shape
    values = np.broadcast_to(plane.reshape(plane.shape + (1,) * (len(shape) - 2)), shape)
    return Field(grid, np.array(values))


# -- scenario documents -------------------------------------------------------------


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return d[key]


def _check_keys(d, allowed: set, path: str) -> None:
    if not isinstance(d, dict):
        raise ScenarioError(path, "expected an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ScenarioError(f"{path}.{extra[0]}" if path else extra[0], "unknown key")


def _number(v, path: str, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ScenarioError(path, f"expected a finite number, got {v!r}")
    if positive and v <= 0:
        raise ScenarioError(path, "must be positive")
    if nonneg and v < 0:
        raise ScenarioError(path, "must be non-negative")
    return float(v)


def _vector(v, n, path: str) -> list[float]:
    if not isinstance(v, list) or len(v) != n:
        raise ScenarioError(path, f"expected a list of {n} numbers")
    return [_number(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _normalize_grid(g, path: str) -> dict:
    _check_keys(g, _GRID_KEYS, path)
    counts = _require(g, "counts", path)
    if not isinstance(counts, list) or len(counts) != 3 or not all(
            isinstance(c, int) and not isinstance(c, bool) for c in counts):
        raise ScenarioError(f"{path}.counts", "expected 3 integers")
    mins = _require(g, "mins", path)
    maxs = _require(g, "maxs", path)
    if isinstance(mins, list) and len(mins) == 2:
        mins = list(mins) + [-np.pi]
    if isinstance(maxs, list) and len(maxs) == 2:
        maxs = list(maxs) + [np.pi]
    mins = _vector(mins, 3, f"{path}.mins")
    maxs = _vector(maxs, 3, f"{path}.maxs")
    periodic = g.get("periodic", [False, False, True])
    if periodic != [False, False, True]:
        raise ScenarioError(f"{path}.periodic", "only the heading axis may (and must) be periodic")
    try:
        make_grid(mins, maxs, counts, periodic)
    except ValueError as exc:
        raise ScenarioError(path, str(exc)) from None
    return {"mins": mins, "maxs": maxs, "counts": list(counts), "periodic": periodic}


def _normalize_bounds(b, path: str) -> dict:
    _check_keys(b, _BOUNDS_KEYS, path)
    out = {k: _number(_require(b, k, path), f"{path}.{k}", nonneg=True) for k in sorted(_BOUNDS_KEYS)}
    if out["v_min"] > out["v_max"]:
        raise ScenarioError(f"{path}.v_min", "exceeds v_max")
    if out["omega_max"] <= 0:
        raise ScenarioError(f"{path}.omega_max", "must be positive")
    return out


def normalize(doc: dict) -> dict:
    """Validate a scenario document and fill in every default."""
    _check_keys(doc, _TOP_KEYS, "")
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version!r}")
    out = {"schema_version": SCHEMA_VERSION, "name": str(doc.get("name", ""))}
    out["planning_grid"] = _normalize_grid(_require(doc, "planning_grid", ""), "planning_grid")
    out["rc"] = _number(_require(doc, "rc", ""), "rc", nonneg=True)
    out["occupy_after_arrival"] = bool(doc.get("occupy_after_arrival", False))

    solver = doc.get("solver", {})
    _check_keys(solver, set(_SOLVER_DEFAULTS), "solver")
    s = dict(_SOLVER_DEFAULTS)
    s.update(solver)
    for k in ("cfl_factor", "convergence_tol"):
        s[k] = _number(s[k], f"solver.{k}", positive=True)
    for k in ("dt_traj", "horizon", "eb_horizon"):
        if s[k] is not None:
            s[k] = _number(s[k], f"solver.{k}", positive=True)
    for k in ("eb_max_steps", "plan_store_stride"):
        if not isinstance(s[k], int) or isinstance(s[k], bool) or s[k] < 1:
            raise ScenarioError(f"solver.{k}", "expected a positive integer")
    if s["time_integrator"] not in ("euler", "tvd_rk2"):
        raise ScenarioError("solver.time_integrator", "expected 'euler' or 'tvd_rk2'")
    out["solver"] = s

    sim = doc.get("sim", {})
    _check_keys(sim, set(_SIM_DEFAULTS), "sim")
    m = dict(_SIM_DEFAULTS)
    m.update(sim)
    if m["model"] not in ("none", "constant", "uniform", "worst_case"):
        raise ScenarioError("sim.model", f"unknown model {m['model']!r}")
    if not isinstance(m["seed"], int) or isinstance(m["seed"], bool):
        raise ScenarioError("sim.seed", "expected an integer")
    if m["dt"] is not None:
        m["dt"] = _number(m["dt"], "sim.dt", positive=True)
    if m["constant"] is not None:
        m["constant"] = _vector(m["constant"], 2, "sim.constant")
    if m["model"] == "constant" and m["constant"] is None:
        raise ScenarioError("sim.constant", "required when sim.model is 'constant'")
    out["sim"] = m

    vehicles = _require(doc, "vehicles", "")
    if not isinstance(vehicles, list) or not vehicles:
        raise ScenarioError("vehicles", "expected a non-empty list")
    vs = []
    for i, v in enumerate(vehicles):
        p = f"vehicles[{i}]"
        _check_keys(v, _VEHICLE_KEYS, p)
        vid = _require(v, "id", p)
        if not isinstance(vid, (str, int)) or isinstance(vid, bool):
            raise ScenarioError(f"{p}.id", "expected a string or integer")
        target = _require(v, "target", p)
        _check_keys(target, {"center", "radius"}, f"{p}.target")
        vs.append({
            "id": str(vid),
            "x0": _vector(_require(v, "x0", p), 3, f"{p}.x0"),
            "target": {
                "center": _vector(_require(target, "center", f"{p}.target"), 2, f"{p}.target.center"),
                "radius": _number(_require(target, "radius", f"{p}.target"), f"{p}.target.radius",
                                  positive=True),
            },
            "sta": _number(_require(v, "sta", p), f"{p}.sta"),
            "bounds": _normalize_bounds(_require(v, "bounds", p), f"{p}.bounds"),
            "reduced": _normalize_bounds(_require(v, "reduced", p), f"{p}.reduced"),
            "d_max": _number(_require(v, "d_max", p), f"{p}.d_max", nonneg=True),
            "R_EB": _number(_require(v, "R_EB", p), f"{p}.R_EB", positive=True),
        })
    ids = [v["id"] for v in vs]
    for i, vid in enumerate(ids):
        if vid in ids[:i]:
            raise ScenarioError(f"vehicles[{i}].id", f"duplicate id {vid!r}")
    out["vehicles"] = vs

    if doc.get("error_grid") is not None:
        out["error_grid"] = _normalize_grid(doc["error_grid"], "error_grid")
    else:
        r = 1.2 * max(v["R_EB"] for v in vs)
        out["error_grid"] = {"mins": [-r, -r, -np.pi], "maxs": [r, r, np.pi],
                             "counts": list(_DEFAULT_ERROR_COUNTS),
                             "periodic": [False, False, True]}
    if doc.get("obstacle_mask") is not None:
        om = doc["obstacle_mask"]
        _check_keys(om, _MASK_KEYS, "obstacle_mask")
        path = _require(om, "path", "obstacle_mask")
        if not isinstance(path, str):
            raise ScenarioError("obstacle_mask.path", "expected a string")
        out["obstacle_mask"] = {
            "path": path,
            "origin": _vector(_require(om, "origin", "obstacle_mask"), 2, "obstacle_mask.origin"),
            "cell_size": _number(_require(om, "cell_size", "obstacle_mask"), "obstacle_mask.cell_size",
                                 positive=True),
        }
    else:
        out["obstacle_mask"] = None
    return out


def _bounds(b: dict, d_max: float = 0.0) -> DubinsBounds:
    return DubinsBounds(b["v_min"], b["v_max"], b["omega_max"], d_max)


def build_scenario(doc: dict, base_dir=None) -> Scenario:
    """Turn a document into a :class:`Scenario` (the document is normalised first)."""
    doc = normalize(doc)
    g = doc["planning_grid"]
    planning = make_grid(g["mins"], g["maxs"], g["counts"], g["periodic"])
    e = doc["error_grid"]
    error = make_grid(e["mins"], e["maxs"], e["counts"], e["periodic"])
    static = None
    if doc["obstacle_mask"] is not None:
        om = doc["obstacle_mask"]
        mpath = Path(om["path"])
        if not mpath.is_absolute() and base_dir is not None:
            mpath = Path(base_dir) / mpath
        try:
            mask = read_mask(mpath, om["origin"], om["cell_size"])
            static = mask_to_field(mask, planning)
        except (OSError, ValueError) as exc:
            raise ScenarioError("obstacle_mask", str(exc)) from None
    s = doc["solver"]
    vehicles = []
    for i, v in enumerate(doc["vehicles"]):
        try:
            vehicles.append(VehicleSpec(
                id=v["id"],
                x0=VehicleState(*v["x0"]),
                target_center=tuple(v["target"]["center"]),
                target_radius=v["target"]["radius"],
                sta=v["sta"],
                tracker=_bounds(v["bounds"], v["d_max"]),
                reduced=_bounds(v["reduced"]),
                R_EB=v["R_EB"],
            ))
        except ValueError as exc:
            raise ScenarioError(f"vehicles[{i}]", str(exc)) from None
        if not vehicles[-1].reduced.strictly_inside(vehicles[-1].tracker):
            raise ScenarioError(f"vehicles[{i}].reduced", "must lie strictly inside bounds")
    eb_solver = SolveOptions(cfl_factor=s["cfl_factor"], time_integrator=s["time_integrator"],
                             convergence_tol=s["convergence_tol"], max_steps=s["eb_max_steps"])
    plan_solver = SolveOptions(cfl_factor=s["cfl_factor"], time_integrator=s["time_integrator"],
                               convergence_tol=s["convergence_tol"],
                               store_stride=s["plan_store_stride"])
    try:
        scenario = Scenario(
            planning_grid=planning,
            error_grid=error,
            vehicles=vehicles,
            rc=doc["rc"],
            static_obstacles=static,
            eb_solver=eb_solver,
            eb_horizon=s["eb_horizon"],
            plan_options=PlanOptions(solver=plan_solver, dt_traj=s["dt_traj"], horizon=s["horizon"]),
            occupy_after_arrival=doc["occupy_after_arrival"],
            sim=doc["sim"],
        )
    except ValueError as exc:
        msg = str(exc)
        path = ""
        for i, v in enumerate(vehicles):
            if msg.startswith(f"vehicle {v.id}:"):
                path = f"vehicles[{i}]"
        raise ScenarioError(path, msg) from None
    for i, v in enumerate(vehicles):
        if v.target_radius <= 0:
            raise ScenarioError(f"vehicles[{i}].target.radius", "must be positive")
    return scenario


def preset_path(name: str):
    """Path-like handle to a bundled preset (``sf_small.json``, ``bay_small.json`` and their masks)."""
    return resources.files("hjspp") / "presets" / name


def read_document(path) -> tuple[dict, Path]:
    """Parse a scenario file, falling back to the bundled presets by file name.

    Returns the raw document and the directory relative mask paths refer to.
    """
    p = Path(path)
    if not p.exists() and p.name in PRESETS and len(p.parts) == 1:
        handle = preset_path(p.name)
        text = handle.read_text()
        base = Path(str(handle)).parent
    else:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ScenarioError("", f"cannot read {path}: {exc.strerror or exc}") from None
        base = p.parent
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return doc, base


def load_scenario(path) -> Scenario:
    doc, base = read_document(path)
    return build_scenario(doc, base)


def load_document(path) -> dict:
    """The normalised document of a scenario file (what :func:`save_scenario` writes back)."""
    doc, base = read_document(path)
    out = normalize(doc)
    if out["obstacle_mask"] is not None and not Path(out["obstacle_mask"]["path"]).is_absolute():
        out["obstacle_mask"]["path"] = str((base / out["obstacle_mask"]["path"]).resolve())
    return out


def save_scenario(doc: dict, path) -> None:
    Path(path).write_text(json.dumps(normalize(copy.deepcopy(doc)), indent=2) + "\n")
