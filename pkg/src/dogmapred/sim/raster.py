"""Ground-truth rasterization and line-of-sight occlusion on the grid."""

from __future__ import annotations

import math

import numpy as np

from ..grid import GridSpec
from .scenario import Rect, Scenario, Segment


def cell_centers(grid: GridSpec, ego_offset):
    """World coordinates (metres) of every cell center, each shaped (W, H)."""
    e = (np.arange(grid.width_cells) + ego_offset[0] + 0.5) * grid.cell_width
    n = (np.arange(grid.height_cells) + ego_offset[1] + 0.5) * grid.cell_width
    return np.meshgrid(e, n, indexing="ij")


def _rect_mask(xs, ys, cx, cy, length, width, heading):
    c, s = math.cos(heading), math.sin(heading)
    dx, dy = xs - cx, ys - cy
    along = dx * c + dy * s
    across = -dx * s + dy * c
    return (np.abs(along) <= 0.5 * length) & (np.abs(across) <= 0.5 * width)


def _segment_mask(xs, ys, g: Segment):
    ax, ay = g.x1 - g.x0, g.y1 - g.y0
    den = ax * ax + ay * ay
    if den == 0:
        d2 = (xs - g.x0) ** 2 + (ys - g.y0) ** 2
    else:
        u = np.clip(((xs - g.x0) * ax + (ys - g.y0) * ay) / den, 0.0, 1.0)
        d2 = (xs - g.x0 - u * ax) ** 2 + (ys - g.y0 - u * ay) ** 2
    return d2 <= (0.5 * g.thickness) ** 2


def _window(grid: GridSpec, ego_offset, cx, cy, radius):
    """Index slices covering a disc, clipped to the grid (possibly empty)."""
    cw = grid.cell_width
    i0 = max(int(math.floor((cx - radius) / cw)) - ego_offset[0], 0)
    i1 = min(int(math.floor((cx + radius) / cw)) - ego_offset[0] + 1, grid.width_cells)
    j0 = max(int(math.floor((cy - radius) / cw)) - ego_offset[1], 0)
    j1 = min(int(math.floor((cy + radius) / cw)) - ego_offset[1] + 1, grid.height_cells)
    return slice(i0, max(i0, i1)), slice(j0, max(j0, j1))


def rasterize_static(static_map, grid: GridSpec, ego_offset) -> np.ndarray:
    xs, ys = cell_centers(grid, ego_offset)
    occ = np.zeros(grid.shape, dtype=bool)
    for g in static_map:
        if isinstance(g, Rect):
            occ |= _rect_mask(xs, ys, g.cx, g.cy, g.length, g.width, g.heading)
        elif isinstance(g, Segment):
            occ |= _segment_mask(xs, ys, g)
        else:
            raise TypeError(f"unsupported static shape {g!r}")
    return occ


def rasterize_actors(actors, t: float, grid: GridSpec, ego_offset):
    """Actor occupancy plus per-cell actor velocity at time ``t``.

    Returns ``(occupied, v_east, v_north)``; later actors overwrite earlier
    ones where footprints overlap.
    """
    occ = np.zeros(grid.shape, dtype=bool)
    ve = np.zeros(grid.shape)
    vn = np.zeros(grid.shape)
    xs, ys = cell_centers(grid, ego_offset)
    for a in actors:
        traj = a.trajectory
        if not traj.active(t):
            continue
        x, y, heading, vx, vy = traj.state(t)
        si, sj = _window(grid, ego_offset, x, y, 0.5 * math.hypot(a.length, a.width))
        if si.start >= si.stop or sj.start >= sj.stop:
            continue
        m = _rect_mask(xs[si, sj], ys[si, sj], x, y, a.length, a.width, heading)
        occ[si, sj] |= m
        ve[si, sj][m] = vx
        vn[si, sj][m] = vy
    return occ, ve, vn


def rasterize_truth(scenario: Scenario, t: float, grid: GridSpec, ego_offset) -> np.ndarray:
    """Binary occupancy: a cell is occupied iff its center lies in an actor footprint or static shape."""
    if not (0 <= t <= scenario.duration):
        raise ValueError(f"time {t} outside scenario duration {scenario.duration}")
    occ, _, _ = rasterize_actors(scenario.actors, t, grid, ego_offset)
    return occ | rasterize_static(scenario.static_map, grid, ego_offset)


def visibility(occupied: np.ndarray, sensor) -> np.ndarray:
    """Line of sight from ``sensor`` (grid-local cell units) to every cell center.

    A cell is hidden when the straight segment from the sensor to its center
    passes through the interior of an occupied cell other than the sensor's own
    cell and the target itself.  Rays are traversed cell by cell
    (Amanatides-Woo); a ray through an exact lattice corner steps diagonally,
    so cells it merely touches do not occlude.
    """
    w, h = occupied.shape
    sx, sy = float(sensor[0]), float(sensor[1])
    ti, tj = np.meshgrid(np.arange(w), np.arange(h), indexing="ij")
    ti, tj = ti.ravel(), tj.ravel()
    dx = ti + 0.5 - sx
    dy = tj + 0.5 - sy
    adx, ady = np.abs(dx), np.abs(dy)
    stx = np.sign(dx).astype(np.int64)
    sty = np.sign(dy).astype(np.int64)
    ix = np.full(ti.shape, int(math.floor(sx)))
    iy = np.full(ti.shape, int(math.floor(sy)))
    hidden = np.zeros(ti.shape, dtype=bool)
    idx = np.flatnonzero((ix != ti) | (iy != tj))
    occ = occupied
    steps = 0
    while idx.size:
        cx, cy = ix[idx], iy[idx]
        # distance from the sensor to the next vertical / horizontal cell boundary
        ex = np.where(stx[idx] > 0, cx + 1 - sx, sx - cx)
        ey = np.where(sty[idx] > 0, cy + 1 - sy, sy - cy)
        lx = ex * ady[idx]
        ly = ey * adx[idx]
        mx = (lx <= ly) & (stx[idx] != 0)
        my = (ly <= lx) & (sty[idx] != 0)
        mx |= sty[idx] == 0
        my |= stx[idx] == 0
        cx = cx + np.where(mx, stx[idx], 0)
        cy = cy + np.where(my, sty[idx], 0)
        ix[idx], iy[idx] = cx, cy
        reached = (cx == ti[idx]) & (cy == tj[idx])
        inside = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        hit = np.zeros(idx.shape, dtype=bool)
        hit[inside] = occ[cx[inside], cy[inside]]
        hidden[idx] |= hit & ~reached
        # a hidden ray needs no further traversal
        idx = idx[~reached & ~hidden[idx]]
        steps += 1
        if steps > w + h + 2:
            raise RuntimeError("ray traversal failed to reach its target cell")
    return ~hidden.reshape(w, h)
