"""Scripted qualitative probes: stopping behind a blocker and yielding to a crossing pedestrian."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import DogmaFrame
from .nn.network import NetworkSpec
from .nn.train import predict
from .particles import BaselineConfig, classify_dynamic, count_occupancy, propagate, sample_particles
from .sim.raster import cell_centers
from .sim.scenes import PEDESTRIAN, PROBE_STOP_BLOCKER_LINE, STREET, probe_crossing_scenes, probe_stop_scene
from .sim.simulate import SimConfig, extract_patch, inject_patch, simulate


def lane_cells(frame: DogmaFrame, x_range, y_min=-np.inf, y_max=np.inf) -> np.ndarray:
    xs, ys = cell_centers(frame.grid, frame.ego_offset)
    return (xs >= x_range[0]) & (xs <= x_range[1]) & (ys > y_min) & (ys <= y_max)


def nb_lane_range(layout=STREET):
    return 0.5 * (layout.road_west + layout.road_east), layout.road_east


def fraction_beyond(plane: np.ndarray, lane: np.ndarray, beyond: np.ndarray) -> float:
    total = float(np.sum(plane[lane], dtype=np.float64))
    return float(np.sum(plane[lane & beyond], dtype=np.float64)) / total if total > 0 else 0.0


@dataclass
class StopProbe:
    net_fraction: float
    particle_fraction: float
    t0: int

    @property
    def passed(self) -> bool:
        return self.net_fraction < self.particle_fraction


def stop_probe(params, spec: NetworkSpec, t0: int = 38, horizon_index: int = 3,
               baseline: BaselineConfig = BaselineConfig(), seed: int = 0, sim_config: SimConfig | None = None):
    """Share of northbound-lane dynamic mass predicted past the blocker's rear edge at 2.0 s."""
    frames, _, _ = simulate(probe_stop_scene(), sim_config or SimConfig(grid=STREET.grid(), occlusion_enabled=False))
    frame = frames[t0]
    lane = lane_cells(frame, nb_lane_range())
    beyond = lane_cells(frame, nb_lane_range(), y_min=PROBE_STOP_BLOCKER_LINE)
    net = predict(params, spec, frame).dynamic_channels[horizon_index]
    mask = classify_dynamic(frame, baseline)
    parts = propagate(sample_particles(frame, mask, baseline, seed), baseline.horizons[horizon_index])
    counts = count_occupancy(parts, frame.grid, frame.ego_offset)
    return StopProbe(fraction_beyond(net, lane, beyond), fraction_beyond(counts, lane, beyond), t0)


@dataclass
class InteractionProbe:
    net_base: float
    net_injected: float
    particle_base: float
    particle_injected: float

    @property
    def net_delta(self) -> float:
        return self.net_injected - self.net_base

    @property
    def particle_delta(self) -> float:
        return self.particle_injected - self.particle_base

    @property
    def passed(self) -> bool:
        return self.net_delta < 0 and self.particle_delta == 0


PATCH_ORIGIN = (100, 74)  # world cell of the patch's south-west corner
PATCH_SIZE = (16, 12)


def crossing_inputs(t0: int = 35, source_frame: int = 21, sim_config: SimConfig | None = None):
    """``(base_frames, injected_frames, patch_mask)``: a pedestrian stepping onto the
    crosswalk is cut from one recording and pasted into another at frame ``t0``."""
    cfg = sim_config or SimConfig(grid=STREET.grid(), occlusion_enabled=False)
    base, source = probe_crossing_scenes()
    base_frames, _, _ = simulate(base, cfg)
    src_frames, _, _ = simulate(source, cfg)
    patch, _ = extract_patch(src_frames, PATCH_ORIGIN, PATCH_SIZE, source_frame, 1)
    p = 0.5 * patch[0, 0] + 0.5 * (1.0 - patch[0, 1])
    mask = (p > 0.5) & (np.hypot(patch[0, 2], patch[0, 3]) > 0.5)
    injected = inject_patch(base_frames, patch, mask, PATCH_ORIGIN, t0)
    return base_frames, injected, mask


def interaction_probe(params, spec: NetworkSpec, t0: int = 35, horizons=(2, 3),
                      baseline: BaselineConfig = BaselineConfig(), seed: int = 0,
                      sim_config: SimConfig | None = None) -> InteractionProbe:
    """Vehicle mass in the northbound lane beyond the crosswalk at 1.5-2.0 s, with and without a pedestrian.

    Particles are sampled only from cells outside the pasted patch, i.e. from
    the vehicle; the baseline has no way to react to the pedestrian.
    """
    base_frames, injected, mask = crossing_inputs(t0, sim_config=sim_config)
    strip_top = STREET.crosswalk_y + PEDESTRIAN[1] + 0.3
    out = []
    for frames in (base_frames, injected):
        frame = frames[t0]
        zone = lane_cells(frame, nb_lane_range(), y_min=strip_top)
        net = predict(params, spec, frame).dynamic_channels
        net_mass = float(sum(np.sum(net[k][zone], dtype=np.float64) for k in horizons))
        patch_cells = np.zeros(frame.grid.shape, dtype=bool)
        e0 = PATCH_ORIGIN[0] - frame.ego_offset[0]
        n0 = PATCH_ORIGIN[1] - frame.ego_offset[1]
        patch_cells[e0 : e0 + PATCH_SIZE[0], n0 : n0 + PATCH_SIZE[1]] = mask
        vehicle = classify_dynamic(frame, baseline) & ~patch_cells
        parts = sample_particles(frame, vehicle, baseline, seed)
        p_mass = 0
        for k in horizons:
            counts = count_occupancy(propagate(parts, baseline.horizons[k]), frame.grid, frame.ego_offset)
            p_mass += int(counts[zone].sum())
        out += [net_mass, float(p_mass)]
    return InteractionProbe(out[0], out[2], out[1], out[3])
