"""Synthetic dynamic occupancy grid sequences.

Stands in for the sensor recordings and the upstream particle-filter map
estimator.  Per-cell masses relax toward their observation target at rate
``alpha`` per frame, which reproduces the smooth convergence and decay the
label generator relies on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..grid import (COV, M_FREE, M_OCC, V_EAST, V_NORTH, VAR_EAST, VAR_NORTH, DEFAULT_VAR_PRIOR,
                    DogmaFrame, GridSpec, _shifted)
from .raster import rasterize_actors, rasterize_static, visibility
from .scenario import Scenario, ScenarioError

OCCUPIED_TARGET = 0.9
FREE_TARGET = 0.9


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec = GridSpec(128, 128)
    convergence_rate: float = 0.5
    mass_noise_sigma: float = 0.02
    velocity_noise_sigma: float = 0.15
    occlusion_enabled: bool = True
    sensor_origin: tuple = (0.0, 0.0)
    unobserved_masses: tuple = (0.0, 0.0)
    var_prior: float = DEFAULT_VAR_PRIOR

    def __post_init__(self):
        if not (0 < self.convergence_rate <= 1):
            raise ValueError("convergence_rate must lie in (0, 1]")
        if self.mass_noise_sigma < 0 or self.velocity_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")


@dataclass
class SimStats:
    dynamic_fraction: list = field(default_factory=list)
    visible_fraction: list = field(default_factory=list)

    @property
    def mean_dynamic_fraction(self) -> float:
        return float(np.mean(self.dynamic_fraction)) if self.dynamic_fraction else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "dynamic_fraction", "visible_fraction"])
            for i, (d, v) in enumerate(zip(self.dynamic_fraction, self.visible_fraction)):
                w.writerow([i, repr(d), repr(v)])


def ego_offset_at(scenario: Scenario, t: float, grid: GridSpec) -> tuple[int, int]:
    """Whole-cell grid origin that keeps the ego in the center cell."""
    x, y = scenario.ego_position(t)
    ci, cj = grid.center_index()
    return (int(math.floor(x / grid.cell_width)) - ci, int(math.floor(y / grid.cell_width)) - cj)


def _check_actors(scenario: Scenario, grid: GridSpec):
    if scenario.bounds is None:
        x, y = scenario.ego_position(0.0)
        half_w = grid.width_cells * grid.cell_width
        half_h = grid.height_cells * grid.cell_width
        bounds = (x - half_w, y - half_h, x + half_w, y + half_h)
    else:
        bounds = scenario.bounds
    for a in scenario.actors:
        w = a.waypoints[0]
        if not (bounds[0] <= w.x <= bounds[2] and bounds[1] <= w.y <= bounds[3]):
            raise ScenarioError(f"actor {a.id} starts outside world bounds {bounds}")


def simulate(scenario: Scenario, config: SimConfig = SimConfig()):
    """Run a scenario; returns ``(frames, truth, stats)``.

    ``truth[i]`` is the binary occupancy of frame ``i`` in that frame's own grid.
    """
    grid = config.grid
    _check_actors(scenario, grid)
    n_frames = int(round(scenario.duration / grid.frame_period))
    rng = np.random.default_rng(scenario.seed)
    alpha = config.convergence_rate
    w, h = grid.shape

    offset = ego_offset_at(scenario, 0.0, grid)
    mo = np.full(grid.shape, config.unobserved_masses[0])
    mf = np.full(grid.shape, config.unobserved_masses[1])
    conv = np.zeros(grid.shape)
    static_cache = {}

    frames, truths = [], []
    stats = SimStats()
    for f in range(n_frames):
        t = f * grid.frame_period
        new_off = ego_offset_at(scenario, t, grid)
        if new_off != offset:
            de, dn = new_off[0] - offset[0], new_off[1] - offset[1]
            mo = _shifted(mo, de, dn, np.full(grid.shape, config.unobserved_masses[0]))
            mf = _shifted(mf, de, dn, np.full(grid.shape, config.unobserved_masses[1]))
            conv = _shifted(conv, de, dn, np.zeros(grid.shape))
            offset = new_off

        if offset not in static_cache:
            static_cache = {offset: rasterize_static(scenario.static_map, grid, offset)}
        dyn, ve, vn = rasterize_actors(scenario.actors, t, grid, offset)
        truth = dyn | static_cache[offset]

        if config.occlusion_enabled:
            ex, ey = scenario.ego_position(t)
            sensor = ((ex + config.sensor_origin[0]) / grid.cell_width - offset[0],
                      (ey + config.sensor_origin[1]) / grid.cell_width - offset[1])
            vis = visibility(truth, sensor)
        else:
            vis = np.ones(grid.shape, dtype=bool)

        occ_seen = vis & truth
        target_o = np.where(occ_seen, OCCUPIED_TARGET, config.unobserved_masses[0])
        target_f = np.where(vis & ~truth, FREE_TARGET, np.where(vis, 0.0, config.unobserved_masses[1]))
        mo = mo + alpha * (target_o - mo)
        mf = mf + alpha * (target_f - mf)
        conv = conv + alpha * (occ_seen - conv)

        ch = np.zeros((7, w, h))
        sig = config.mass_noise_sigma
        nmo = np.clip(mo + sig * rng.standard_normal(grid.shape), 0.0, 1.0)
        nmf = np.clip(mf + sig * rng.standard_normal(grid.shape), 0.0, 1.0)
        total = nmo + nmf
        over = total > 1.0
        nmo[over] /= total[over]
        nmf[over] /= total[over]
        ch[M_OCC], ch[M_FREE] = nmo, nmf

        vs = config.velocity_noise_sigma
        carry = occ_seen
        ch[V_EAST] = np.where(carry, ve, 0.0) + vs * rng.standard_normal(grid.shape)
        ch[V_NORTH] = np.where(carry, vn, 0.0) + vs * rng.standard_normal(grid.shape)
        var = config.var_prior * (1.0 - conv) + vs * vs
        ch[VAR_EAST] = var
        ch[VAR_NORTH] = var
        ch[COV] = 0.0

        ch = ch.astype(np.float32)
        # f32 rounding can push the mass sum one ulp over 1
        s32 = ch[M_OCC].astype(np.float64) + ch[M_FREE]
        bad = s32 > 1.0
        if bad.any():
            ch[M_FREE][bad] = np.nextafter(np.float32(1.0) - ch[M_OCC][bad], np.float32(0))
        frame = DogmaFrame(grid, round(t, 9), offset, ch)
        frames.append(frame)
        truths.append(truth)
        stats.dynamic_fraction.append(float(dyn.mean()))
        stats.visible_fraction.append(float(vis.mean()))
    return frames, truths, stats


def inject_patch(frames: Sequence[DogmaFrame], patch: np.ndarray, mask: np.ndarray,
                 position: tuple[int, int], start_frame: int) -> list[DogmaFrame]:
    """Paste a recorded object into a sequence.

    ``patch`` holds per-frame channel sub-grids ``(F, 7, pw, ph)``; cells under
    ``mask`` replace the frame's channels at world cell ``position`` (the
    patch's south-west cell) in frames ``start_frame .. start_frame + F - 1``.
    """
    patch = np.asarray(patch, dtype=np.float32)
    mask = np.asarray(mask, dtype=bool)
    if patch.ndim != 4 or patch.shape[1] != 7 or patch.shape[2:] != mask.shape:
        raise ValueError(f"patch {patch.shape} / mask {mask.shape} mismatch")
    out = list(frames)
    if not mask.any():
        return out
    pw, ph = mask.shape
    for i in range(patch.shape[0]):
        k = start_frame + i
        if not (0 <= k < len(frames)):
            raise ValueError(f"patch frame {i} maps to frame {k} outside the sequence")
        fr = frames[k]
        e0 = position[0] - fr.ego_offset[0]
        n0 = position[1] - fr.ego_offset[1]
        if e0 < 0 or n0 < 0 or e0 + pw > fr.grid.width_cells or n0 + ph > fr.grid.height_cells:
            raise ValueError(f"patch at world cell {position} leaves the grid of frame {k}")
        ch = np.array(fr.channels)
        region = ch[:, e0 : e0 + pw, n0 : n0 + ph]
        region[:, mask] = patch[i][:, mask]
        out[k] = fr.with_channels(ch)
    return out


def extract_patch(frames: Sequence[DogmaFrame], position: tuple[int, int], size: tuple[int, int],
                  start_frame: int, count: int, mask: np.ndarray | None = None):
    """Cut world-aligned channel sub-grids out of a sequence (inverse of :func:`inject_patch`).

    Without an explicit ``mask`` the cells with ``P_O > 0.5`` in the first cut
    frame are used.
    """
    pw, ph = size
    cuts = []
    for k in range(start_frame, start_frame + count):
        fr = frames[k]
        e0 = position[0] - fr.ego_offset[0]
        n0 = position[1] - fr.ego_offset[1]
        if e0 < 0 or n0 < 0 or e0 + pw > fr.grid.width_cells or n0 + ph > fr.grid.height_cells:
            raise ValueError(f"patch region leaves the grid of frame {k}")
        cuts.append(np.array(fr.channels[:, e0 : e0 + pw, n0 : n0 + ph]))
    patch = np.stack(cuts)
    if mask is None:
        mask = 0.5 * patch[0, M_OCC] + 0.5 * (1 - patch[0, M_FREE]) > 0.5
    return patch, mask
