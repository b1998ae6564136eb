"""Rectilinear grids, implicit-surface fields and the set algebra built on them.

A :class:`Field` holds one scalar per grid node; its sub-zero level set is the
set it represents. Signed distance is the canonical encoding, which makes
union/intersection pointwise ``min``/``max`` and Minkowski dilation by a disc a
constant shift.

Axis order is position axes first, then heading. Periodic axes drop the seam
node, so a periodic axis over ``[-pi, pi)`` with ``n`` nodes has spacing
``2*pi/n`` and never stores both ``-pi`` and ``pi``.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

#: Value used for "empty set" fields; keeps all arithmetic finite.
EMPTY = 1e9


class GridMismatchError(ValueError):
    """Two fields (or a field and a series) live on different grids."""


@dataclass(frozen=True)
class Grid:
    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    counts: tuple[int, ...]
    periodic: tuple[bool, ...]

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @functools.cached_property
    def spacing(self) -> np.ndarray:
        lo, hi = np.asarray(self.mins), np.asarray(self.maxs)
        n = np.asarray(self.counts, dtype=float)
        per = np.asarray(self.periodic)
        return np.where(per, (hi - lo) / n, (hi - lo) / (n - 1))

    def axis(self, i: int) -> np.ndarray:
        """Node coordinates along axis ``i``."""
        return self.mins[i] + self.spacing[i] * np.arange(self.counts[i])

    @functools.cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        """Broadcastable coordinate arrays, one per axis (``np.ix_`` layout)."""
        return np.ix_(*[self.axis(i) for i in range(self.ndim)])

    def points(self) -> np.ndarray:
        """All node coordinates as an ``(n_nodes, ndim)`` array in row-major order."""
        full = np.meshgrid(*[self.axis(i) for i in range(self.ndim)], indexing="ij")
        return np.stack([f.ravel() for f in full], axis=-1)

    def drop_axis(self, axis: int) -> "Grid":
        keep = [i for i in range(self.ndim) if i != axis]
        return Grid(
            tuple(self.mins[i] for i in keep),
            tuple(self.maxs[i] for i in keep),
            tuple(self.counts[i] for i in keep),
            tuple(self.periodic[i] for i in keep),
        )

    def contains(self, point, axes: Sequence[int] | None = None, tol: float = 1e-9) -> bool:
        """True if ``point`` lies inside the bounds of every non-periodic axis.

        With ``axes`` given, ``point[k]`` is a coordinate on axis ``axes[k]``.
        """
        point = np.asarray(point, dtype=float)
        axes = range(self.ndim) if axes is None else axes
        for x, i in zip(point, axes):
            if self.periodic[i]:
                continue
            span = tol * max(1.0, self.maxs[i] - self.mins[i])
            if x < self.mins[i] - span or x > self.maxs[i] + span:
                return False
        return True


def make_grid(mins, maxs, counts, periodic=None) -> Grid:
    """Build a :class:`Grid`, validating extents and node counts.

    Examples
    --------
    >>> g = make_grid([0, 0], [1000, 1000], [101, 101])
    >>> g.spacing.tolist()
    [10.0, 10.0]
    """
    mins = tuple(float(m) for m in mins)
    maxs = tuple(float(m) for m in maxs)
    counts = tuple(int(c) for c in counts)
    if periodic is None:
        periodic = (False,) * len(counts)
    periodic = tuple(bool(p) for p in periodic)
    if not (len(mins) == len(maxs) == len(counts) == len(periodic)):
        raise ValueError(
            f"dimension mismatch: mins={len(mins)}, maxs={len(maxs)}, "
            f"counts={len(counts)}, periodic={len(periodic)}"
        )
    if len(counts) == 0:
        raise ValueError("grid needs at least one axis")
    for i, (lo, hi, n) in enumerate(zip(mins, maxs, counts)):
        if not hi > lo:
            raise ValueError(f"axis {i}: non-positive extent [{lo}, {hi}]")
        if n < 3:
            raise ValueError(f"axis {i}: count {n} < 3")
    return Grid(mins, maxs, counts, periodic)


@dataclass(frozen=True, eq=False)
class Field:
    """Scalar values on every node of ``grid`` (array shape ``grid.shape``)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            if values.size != int(np.prod(self.grid.shape)):
                raise ValueError(
                    f"{values.size} values for a grid of shape {self.grid.shape}"
                )
            values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @functools.cached_property
    def gradient(self) -> tuple[np.ndarray, ...]:
        """Central-difference gradient on every node (one-sided at open boundaries)."""
        return tuple(_central_difference(self.values, self.grid, a) for a in range(self.grid.ndim))


@dataclass(frozen=True, eq=False)
class FieldSeries:
    """Frames of a time-varying field on one shared grid, times strictly increasing."""

    times: np.ndarray
    frames: list = field(repr=False)

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if len(self.frames) == 0:
            raise ValueError("a series needs at least one frame")
        if len(times) != len(self.frames):
            raise ValueError(f"{len(times)} times for {len(self.frames)} frames")
        if np.any(np.diff(times) <= 0):
            raise ValueError("series times must be strictly increasing")
        g = self.frames[0].grid
        if any(f.grid != g for f in self.frames):
            raise GridMismatchError("all frames of a series must share one grid")
        object.__setattr__(self, "times", times)

    @property
    def grid(self) -> Grid:
        return self.frames[0].grid

    def __len__(self) -> int:
        return len(self.frames)

    def at(self, t: float, mode: str = "linear") -> np.ndarray:
        """Frame values at time ``t``.

        ``mode="linear"`` blends the bracketing frames; ``mode="min"`` takes
        their pointwise minimum (a conservative choice for obstacles). Times
        outside the stored range hold the nearest end frame.
        """
        times = self.times
        if len(times) == 1 or t <= times[0]:
            return self.frames[0].values
        if t >= times[-1]:
            return self.frames[-1].values
        k = int(np.searchsorted(times, t, side="right")) - 1
        a, b = self.frames[k].values, self.frames[k + 1].values
        if mode == "min":
            return np.minimum(a, b)
        w = (t - times[k]) / (times[k + 1] - times[k])
        if w == 0.0:
            return a
        return (1.0 - w) * a + w * b

    def shifted(self, dt: float) -> "FieldSeries":
        return FieldSeries(self.times + dt, self.frames)


def _check_same(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


def disc_field(grid: Grid, center, radius: float, position_axes=(0, 1)) -> Field:
    """Signed distance to a closed disc (ball) on ``position_axes``, extruded over the rest."""
    position_axes = tuple(position_axes)
    if any(a < 0 or a >= grid.ndim for a in position_axes):
        raise ValueError(f"position_axes {position_axes} out of range for a {grid.ndim}-D grid")
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)
    sq = 0.0
    for c, a in zip(center, position_axes):
        sq = sq + (grid.mesh[a] - c) ** 2
    values = np.broadcast_to(np.sqrt(sq) - radius, grid.shape)
    return Field(grid, np.array(values))


def set_union(a: Field, b: Field) -> Field:
    _check_same(a, b)
    return Field(a.grid, np.minimum(a.values, b.values))


def set_intersect(a: Field, b: Field) -> Field:
    _check_same(a, b)
    return Field(a.grid, np.maximum(a.values, b.values))


def set_complement(a: Field) -> Field:
    return Field(a.grid, -a.values)


def dilate(f: Field, radius: float) -> Field:
    """Minkowski sum with a closed disc of ``radius`` (signed-distance shift)."""
    if radius < 0:
        raise ValueError("dilation radius must be non-negative; use erode()")
    return Field(f.grid, f.values - radius)


def erode(f: Field, radius: float) -> Field:
    if radius < 0:
        raise ValueError("erosion radius must be non-negative")
    return Field(f.grid, f.values + radius)


def project_min(f: Field, axis: int) -> Field:
    """Existential projection: minimum over ``axis``."""
    if f.grid.ndim < 2:
        raise ValueError("projection needs a field of dimension >= 2")
    if axis < 0 or axis >= f.grid.ndim:
        raise ValueError(f"axis {axis} out of range")
    return Field(f.grid.drop_axis(axis), f.values.min(axis=axis))


# -- interpolation -------------------------------------------------------------


def _cell_weights(grid: Grid, points: np.ndarray):
    """Corner indices/weights for multilinear interpolation at ``points`` (n, ndim)."""
    idx0, idx1, fracs = [], [], []
    for a in range(grid.ndim):
        h = grid.spacing[a]
        n = grid.counts[a]
        u = (points[:, a] - grid.mins[a]) / h
        if grid.periodic[a]:
            i0 = np.floor(u)
            fr = u - i0
            i0 = i0.astype(np.intp) % n
            i1 = (i0 + 1) % n
        else:
            tol = 1e-9 * (n - 1)
            if np.any(u < -tol) or np.any(u > n - 1 + tol):
                bad = points[(u < -tol) | (u > n - 1 + tol)][0]
                raise ValueError(
                    f"point {bad.tolist()} outside grid on axis {a} "
                    f"[{grid.mins[a]}, {grid.maxs[a]}]"
                )
            u = np.clip(u, 0.0, n - 1)
            i0 = np.minimum(np.floor(u).astype(np.intp), n - 2)
            fr = u - i0
            i1 = i0 + 1
        idx0.append(i0)
        idx1.append(i1)
        fracs.append(fr)
    return idx0, idx1, fracs


def _gather(arrays, idx0, idx1, fracs):
    ndim = len(idx0)
    out = [0.0 for _ in arrays]
    for corner in range(1 << ndim):
        w = 1.0
        idx = []
        for a in range(ndim):
            if corner >> a & 1:
                w = w * fracs[a]
                idx.append(idx1[a])
            else:
                w = w * (1.0 - fracs[a])
                idx.append(idx0[a])
        idx = tuple(idx)
        for k, arr in enumerate(arrays):
            out[k] = out[k] + w * arr[idx]
    return out


def _as_points(grid: Grid, point) -> tuple[np.ndarray, bool]:
    p = np.asarray(point, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[1] != grid.ndim:
        raise ValueError(f"point dimension {p.shape[1]} != grid dimension {grid.ndim}")
    return p, single


def interpolate_values(grid: Grid, values: np.ndarray, point):
    """Multilinear interpolation of a raw node array (see :func:`interpolate`)."""
    p, single = _as_points(grid, point)
    (out,) = _gather([values], *_cell_weights(grid, p))
    return float(out[0]) if single else out


def interpolate(f: Field, point):
    """Multilinear interpolation of ``f`` at one point or an ``(n, ndim)`` batch.

    Periodic axes wrap; a point outside a non-periodic axis raises ``ValueError``.
    """
    return interpolate_values(f.grid, f.values, point)


def _central_difference(values: np.ndarray, grid: Grid, a: int) -> np.ndarray:
    h = grid.spacing[a]
    if grid.periodic[a]:
        return (np.roll(values, -1, axis=a) - np.roll(values, 1, axis=a)) / (2 * h)
    return np.gradient(values, h, axis=a, edge_order=1)


def _local_gradient(grid: Grid, values: np.ndarray, idx0, idx1, fracs) -> np.ndarray:
    """Central differences gathered only at the cell corners around each point."""
    ndim = grid.ndim
    out = np.zeros((len(fracs[0]), ndim))
    for corner in range(1 << ndim):
        w = 1.0
        idx = []
        for a in range(ndim):
            if corner >> a & 1:
                w = w * fracs[a]
                idx.append(idx1[a])
            else:
                w = w * (1.0 - fracs[a])
                idx.append(idx0[a])
        for a in range(ndim):
            n, h = grid.counts[a], grid.spacing[a]
            lo, hi = list(idx), list(idx)
            if grid.periodic[a]:
                lo[a] = (idx[a] - 1) % n
                hi[a] = (idx[a] + 1) % n
                span = 2 * h
            else:
                lo[a] = np.maximum(idx[a] - 1, 0)
                hi[a] = np.minimum(idx[a] + 1, n - 1)
                span = (hi[a] - lo[a]) * h
            out[:, a] += w * (values[tuple(hi)] - values[tuple(lo)]) / span
    return out


def gradient_values_at(grid: Grid, values: np.ndarray, point) -> np.ndarray:
    p, single = _as_points(grid, point)
    g = _local_gradient(grid, values, *_cell_weights(grid, p))
    return g[0] if single else g


def gradient_at(f: Field, point) -> np.ndarray:
    """Gradient at ``point``: central differences, interpolated multilinearly."""
    return gradient_values_at(f.grid, f.values, point)


# -- export --------------------------------------------------------------------


def write_field_csv(f: Field, path) -> None:
    """Write one row per node (row-major): ``axis0,axis1[,axis2],value``."""
    pts = f.grid.points()
    header = [f"axis{i}" for i in range(f.grid.ndim)] + ["value"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row, v in zip(pts, f.values.ravel()):
            w.writerow([repr(float(x)) for x in row] + [repr(float(v))])


def read_field_csv(path, grid: Grid) -> Field:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != grid.ndim + 1:
        raise GridMismatchError(f"{path}: {data.shape[1] - 1} axes, grid has {grid.ndim}")
    if not np.allclose(data[:, :-1], grid.points()):
        raise GridMismatchError(f"{path}: node coordinates do not match the grid")
    return Field(grid, data[:, -1])


def zero_contours(f: Field) -> list[np.ndarray]:
    """Zero level set of a 2-D field as a list of ``(k, 2)`` polylines in world units."""
    from skimage import measure

    if f.grid.ndim != 2:
        raise ValueError("zero_contours needs a 2-D field")
    vals = f.values
    if f.grid.periodic[0] or f.grid.periodic[1]:
        vals = np.pad(vals, [(0, 1 if p else 0) for p in f.grid.periodic], mode="wrap")
    lines = []
    for c in measure.find_contours(vals, 0.0):
        xy = np.asarray(f.grid.mins) + c * f.grid.spacing
        lines.append(xy)
    return lines


def write_contour_svg(f: Field, path, stroke: str = "black") -> None:
    """Render the zero level set of a 2-D field as SVG polylines."""
    from hjspp import svgplot

    canvas = svgplot.Canvas((f.grid.mins[0], f.grid.maxs[0]), (f.grid.mins[1], f.grid.maxs[1]))
    for line in zero_contours(f):
        canvas.polyline(line, stroke=stroke)
    canvas.save(path)
