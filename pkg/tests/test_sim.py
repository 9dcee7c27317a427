import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from dogmapred.grid import DogmaFrame, GridSpec, extract_cell_series, unknown_channels
from dogmapred.sim.raster import rasterize_truth, visibility
from dogmapred.sim.scenario import (
    Actor, Rect, Scenario, ScenarioError, Segment, Trajectory, Waypoint, dump_scenario, parse_scenario,
)
from dogmapred.sim.scenes import FAMILIES, STREET, make_scene
from dogmapred.sim.simulate import SimConfig, extract_patch, inject_patch, simulate

CELL = 0.15


def car(x0, y0, speed=1.5, duration=4.0, heading=0.0, length=1.5, width=0.9, aid="car"):
    x1 = x0 + speed * duration * math.cos(heading)
    y1 = y0 + speed * duration * math.sin(heading)
    return Actor(aid, "vehicle", length, width,
                 (Waypoint(x0, y0, heading, speed, 0.0), Waypoint(x1, y1, heading, speed, duration)))


def small_config(w=64, h=16, **kw):
    kw.setdefault("occlusion_enabled", False)
    return SimConfig(grid=GridSpec(w, h), **kw)


# --- scenario ---------------------------------------------------------------


def test_scenario_text_roundtrip():
    sc = Scenario(
        actors=(car(-3.0, 0.2), Actor("ped", "pedestrian", 0.5, 0.5,
                                     (Waypoint(1, 1, 0, 0, 0, "wait-then-cross"), Waypoint(1, 3, 1.5, 1.2, 2.5, "cross")))),
        static_map=(Rect(2.0, -1.0, 3.0, 0.5, 0.3), Segment(0, 0, 4, 0.5, 0.2)),
        ego_trajectory=(Waypoint(0, 0, 0, 0, 0),),
        duration=4.0, seed=9, bounds=(-10, -10, 10, 10))
    assert parse_scenario(dump_scenario(sc)) == sc


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        Actor("a", "vehicle", 0.0, 1.0, (Waypoint(0, 0, 0, 1, 0),))
    with pytest.raises(ScenarioError):
        Actor("a", "vehicle", 1.0, 1.0, (Waypoint(0, 0, 0, 1, 1), Waypoint(1, 0, 0, 1, 1)))
    with pytest.raises(ScenarioError):
        Waypoint(0, 0, 0, 1, 0, "fly")
    with pytest.raises(ScenarioError):
        Scenario(duration=0)
    with pytest.raises(ScenarioError):
        parse_scenario("[scenario]\nduration = 1\n[static x]\nshape = blob\n")


def test_trajectory_hits_waypoints_with_matching_speed():
    tr = Trajectory((Waypoint(0, 0, 0, 2.0, 0), Waypoint(3, 0, 0, 1.0, 2), Waypoint(3, 0, 0, 0, 4, "stop")))
    assert tr.state(2.0 - 1e-12)[0] == pytest.approx(3.0)
    x, _, _, vx, _ = tr.state(0.5)
    assert vx == pytest.approx(2.0 - 0.25)
    assert tr.state(3.0)[:2] == (3.0, 0.0)


# --- raster -----------------------------------------------------------------


def test_truth_centroid_advances_one_cell_per_frame():
    sc = Scenario(actors=(car(-3.0, 0.1),), duration=4.0)
    _, truths, stats = simulate(sc, small_config())
    cents = [np.argwhere(t)[:, 0].mean() for t in truths[1:-1]]
    steps = np.diff(cents)
    assert np.all(np.abs(steps - 1.0) <= 0.2)
    assert (cents[-1] - cents[0]) / (len(cents) - 1) == pytest.approx(1.0, abs=0.02)
    assert max(stats.dynamic_fraction) > 0


def test_truth_at_t0_matches_initial_placement():
    g = GridSpec(20, 20)
    sc = Scenario(actors=(car(0.0, 0.0, length=0.9, width=0.6),), duration=4.0)
    occ = rasterize_truth(sc, 0.0, g, (-10, -10))
    # cell centres within 0.45 m east-west and 0.3 m north-south of the origin
    want = np.zeros((20, 20), bool)
    want[7:13, 8:12] = True
    np.testing.assert_array_equal(occ, want)
    with pytest.raises(ValueError):
        rasterize_truth(sc, 5.0, g, (-10, -10))
    far = Scenario(actors=(car(100.0, 100.0),), duration=4.0)
    assert not rasterize_truth(far, 0.0, g, (-10, -10)).any()


@pytest.mark.parametrize("heading", [0.0, 0.4, 1.1])
def test_rasterized_area_within_perimeter_band(heading):
    g = GridSpec(32, 32)
    length, width = 2.3, 1.1
    cx, cy = 2.41, 2.37
    sc = Scenario(actors=(Actor("a", "vehicle", length, width, (Waypoint(cx, cy, heading, 0, 0),
                                                                 Waypoint(cx, cy, heading, 0, 1))),),
                  duration=1.0)
    occ = rasterize_truth(sc, 0.0, g, (0, 0))
    c, s = math.cos(heading), math.sin(heading)

    def inside(x, y):
        dx, dy = x - cx, y - cy
        return abs(dx * c + dy * s) <= length / 2 and abs(-dx * s + dy * c) <= width / 2

    area = oracles.supersampled_area(inside, 32, 32, CELL, factor=8)
    assert abs(occ.sum() * CELL ** 2 - area) <= 2 * (length + width) * CELL


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_visibility_matches_ray_oracle(seed, fx, fy):
    rng = np.random.default_rng(seed)
    occ = rng.random((10, 9)) < 0.15
    sensor = (4 + fx, 4 + fy)
    np.testing.assert_array_equal(visibility(occ, sensor), oracles.visibility_oracle(occ, sensor))


def test_wall_hides_cells_behind_it():
    occ = np.zeros((12, 12), bool)
    occ[8, 3:9] = True
    vis = visibility(occ, (2.5, 6.5))
    assert vis[8, 6] and not vis[10, 6] and vis[10, 11]


# --- simulate ---------------------------------------------------------------


def test_empty_scenario():
    frames, truths, stats = simulate(Scenario(duration=1.0), small_config(16, 16))
    assert len(frames) == 10
    assert not any(t.any() for t in truths)
    assert stats.mean_dynamic_fraction == 0.0


def test_simulation_deterministic_and_valid():
    sc = Scenario(actors=(car(-3.0, 0.1),), static_map=(Rect(0, 1.0, 2.0, 0.3),), duration=2.0, seed=3)
    cfg = small_config(occlusion_enabled=True)
    a, ta, _ = simulate(sc, cfg)
    b, tb, _ = simulate(sc, cfg)
    assert a == b
    assert all(np.array_equal(x, y) for x, y in zip(ta, tb))
    for f in a:
        f.validate()


def test_alpha_one_converges_in_one_frame():
    sc = Scenario(static_map=(Rect(0.0, 0.0, 0.6, 0.6),), duration=0.5)
    cfg = small_config(16, 16, convergence_rate=1.0, mass_noise_sigma=0.0, velocity_noise_sigma=0.0)
    frames, truths, _ = simulate(sc, cfg)
    np.testing.assert_allclose(frames[0].occupancy[truths[0]], 0.95, atol=1e-7)
    np.testing.assert_allclose(frames[0].occupancy[~truths[0]], 0.05, atol=1e-7)


def test_relaxation_monotone_while_visible():
    sc = Scenario(static_map=(Rect(0.0, 0.0, 0.6, 0.6),), duration=2.0)
    cfg = small_config(16, 16, convergence_rate=0.3, mass_noise_sigma=0.0, velocity_noise_sigma=0.0)
    frames, truths, _ = simulate(sc, cfg)
    p = np.array([f.occupancy[8, 8] for f in frames])
    assert truths[0][8, 8]
    assert np.all(np.diff(p) >= 0) and p[-1] > 0.9
    var = np.array([f.channels[4, 8, 8] for f in frames])
    assert np.all(np.diff(var) <= 0)


def test_simulate_errors():
    with pytest.raises(ValueError):
        SimConfig(convergence_rate=0.0)
    with pytest.raises(ValueError):
        SimConfig(mass_noise_sigma=-1.0)
    with pytest.raises(ScenarioError):
        simulate(Scenario(actors=(car(500.0, 0.0),), duration=1.0), small_config())


def test_ego_motion_shifts_origin_in_whole_cells():
    ego = (Waypoint(0, 0, 0, 1.5, 0), Waypoint(6, 0, 0, 1.5, 4))
    frames, _, _ = simulate(Scenario(ego_trajectory=ego, duration=2.0), small_config(32, 32))
    offs = [f.ego_offset[0] for f in frames]
    assert offs[0] == -16 and offs[10] == -6
    assert all(b - a in (0, 1) for a, b in zip(offs, offs[1:]))


# --- injection ----------------------------------------------------------------


def blank_frames(n=5, grid=GridSpec(10, 10), offset=(0, 0)):
    return [DogmaFrame(grid, 0.1 * t, offset, unknown_channels(grid)) for t in range(n)]


def test_inject_examples():
    frames = blank_frames()
    rng = np.random.default_rng(0)
    patch = np.zeros((3, 7, 3, 2), np.float32)
    patch[:, 0] = rng.random((3, 3, 2)) * 0.5
    patch[:, 1] = 0.25
    patch[:, 4:6] = 1.0
    mask = np.array([[1, 0], [1, 1], [0, 1]], bool)
    out = inject_patch(frames, patch, mask, (4, 5), 1)
    assert out[0] is frames[0] and out[4] is frames[4]
    for k in range(3):
        region = out[k + 1].channels[:, 4:7, 5:7]
        np.testing.assert_array_equal(region[:, mask], patch[k][:, mask])
        np.testing.assert_array_equal(region[:, ~mask], frames[0].channels[:, 4:7, 5:7][:, ~mask])
    assert inject_patch(frames, patch, np.zeros((3, 2), bool), (4, 5), 1) == frames
    s = extract_cell_series(out, (5, 5))
    np.testing.assert_allclose(s.values[1:4], 0.5 * patch[:, 0, 1, 0] + 0.5 * (1 - 0.25), atol=1e-7)
    with pytest.raises(ValueError):
        inject_patch(frames, patch, mask, (8, 5), 1)
    with pytest.raises(ValueError):
        inject_patch(frames, patch, mask, (4, 5), 3)


def test_extract_then_inject_restores_region():
    sc = Scenario(actors=(car(-3.0, 0.1),), duration=2.0, seed=1)
    frames, _, _ = simulate(sc, small_config())
    patch, mask = extract_patch(frames, (-20, -3), (12, 6), 4, 5)
    assert mask.any()
    again = inject_patch(frames, patch, mask, (-20, -3), 4)
    assert again == frames


# --- street scenes ------------------------------------------------------------


@pytest.mark.parametrize("family", FAMILIES)
def test_scene_families_simulate(family):
    sc = make_scene(family, 3, duration=4.0)
    assert make_scene(family, 3, duration=4.0) == sc
    frames, truths, stats = simulate(sc, SimConfig(grid=STREET.grid(), occlusion_enabled=False))
    assert frames[0].grid.shape == (128, 128)
    assert max(stats.dynamic_fraction) > 0
    assert all(f.ego_offset == (0, 0) for f in frames)
    with pytest.raises(ValueError):
        make_scene("flying", 0)
