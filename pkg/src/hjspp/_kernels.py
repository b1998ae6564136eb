"""Compiled Lax-Friedrichs rate kernels for the built-in 3-D Hamiltonians.

Each kernel evaluates, on an ``(x, y, theta)`` grid with open position axes
and a periodic heading axis, exactly what the generic numpy path in
:mod:`hjspp.hjsolver` computes: ``H(x, (p- + p+)/2) + sum_a alpha_a (p+ - p-)/2``
with first-order one-sided differences and linear ghost extrapolation.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _diffs(v, i, j, k, nx, ny, nt, hx, hy, ht):
    c = v[i, j, k]
    if i == 0:
        fx = (v[1, j, k] - c) / hx
        bx = fx
    elif i == nx - 1:
        bx = (c - v[i - 1, j, k]) / hx
        fx = bx
    else:
        fx = (v[i + 1, j, k] - c) / hx
        bx = (c - v[i - 1, j, k]) / hx
    if j == 0:
        fy = (v[i, 1, k] - c) / hy
        by = fy
    elif j == ny - 1:
        by = (c - v[i, j - 1, k]) / hy
        fy = by
    else:
        fy = (v[i, j + 1, k] - c) / hy
        by = (c - v[i, j - 1, k]) / hy
    kp = k + 1 if k < nt - 1 else 0
    km = k - 1 if k > 0 else nt - 1
    ft = (v[i, j, kp] - c) / ht
    bt = (c - v[i, j, km]) / ht
    return bx, fx, by, fy, bt, ft


@njit(cache=True)
def eb_rate(v, out, hx, hy, ht, ex, ey, cos_t, sin_t, ax, ay, at,
            vmin, vmax, wmax, vrmin, vrmax, wrmax, dmax):
    nx, ny, nt = v.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nt):
                bx, fx, by, fy, bt, ft = _diffs(v, i, j, k, nx, ny, nt, hx, hy, ht)
                p1 = 0.5 * (bx + fx)
                p2 = 0.5 * (by + fy)
                p3 = 0.5 * (bt + ft)
                q = p1 * cos_t[k] + p2 * sin_t[k]
                c = p1 * ey[j] - p2 * ex[i] - p3
                h = vmax * max(q, 0.0) + vmin * min(q, 0.0) + wmax * abs(p3)
                h -= vrmax * max(p1, 0.0) + vrmin * min(p1, 0.0)
                h -= wrmax * abs(c) + dmax * math.sqrt(p1 * p1 + p2 * p2)
                out[i, j, k] = (h + 0.5 * ax[i, j, k] * (fx - bx)
                                + 0.5 * ay[i, j, k] * (fy - by)
                                + 0.5 * at[i, j, k] * (ft - bt))


@njit(cache=True)
def rtt_rate(v, out, hx, hy, ht, cos_t, sin_t, ax, ay, at, vmin, vmax, wmax):
    nx, ny, nt = v.shape
    for i in range(nx):
        for j in range(ny):
            for k in range(nt):
                bx, fx, by, fy, bt, ft = _diffs(v, i, j, k, nx, ny, nt, hx, hy, ht)
                p1 = 0.5 * (bx + fx)
                p2 = 0.5 * (by + fy)
                p3 = 0.5 * (bt + ft)
                q = p1 * cos_t[k] + p2 * sin_t[k]
                h = vmin * max(q, 0.0) + vmax * min(q, 0.0) - wmax * abs(p3)
                out[i, j, k] = (h + 0.5 * ax[i, j, k] * (fx - bx)
                                + 0.5 * ay[i, j, k] * (fy - by)
                                + 0.5 * at[i, j, k] * (ft - bt))


def supports(grid) -> bool:
    return grid.ndim == 3 and tuple(grid.periodic) == (False, False, True) and min(grid.counts[:2]) >= 2


def _full(a, shape):
    return np.ascontiguousarray(np.broadcast_to(np.asarray(a, dtype=float), shape))


def make_eb_rate(grid, alpha, tracker, reduced):
    hx, hy, ht = (float(h) for h in grid.spacing)
    ex, ey, th = (np.ascontiguousarray(grid.axis(i)) for i in range(3))
    cos_t, sin_t = np.cos(th), np.sin(th)
    ax, ay, at = (_full(a, grid.shape) for a in alpha)

    def rate(v):
        out = np.empty_like(v)
        eb_rate(np.ascontiguousarray(v), out, hx, hy, ht, ex, ey, cos_t, sin_t, ax, ay, at,
                tracker.v_min, tracker.v_max, tracker.omega_max,
                reduced.v_min, reduced.v_max, reduced.omega_max, tracker.d_max)
        return out

    return rate


def make_rtt_rate(grid, alpha, reduced):
    hx, hy, ht = (float(h) for h in grid.spacing)
    th = grid.axis(2)
    cos_t, sin_t = np.cos(th), np.sin(th)
    ax, ay, at = (_full(a, grid.shape) for a in alpha)

    def rate(v):
        out = np.empty_like(v)
        rtt_rate(np.ascontiguousarray(v), out, hx, hy, ht, cos_t, sin_t, ax, ay, at,
                 reduced.v_min, reduced.v_max, reduced.omega_max)
        return out

    return rate
