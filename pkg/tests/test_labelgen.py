import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from dogmapred.grid import CellSeries, DogmaFrame, GridSpec, LabelSpec, unknown_channels
from dogmapred.labelgen import (
    DetectorConfig, InsufficientHorizon, curvature, detect_dynamic_intervals, hold_max, label_sample,
    nms_events, read_labels, smooth_series, smooth_stack, static_level, write_labels,
)


def pulse_signal(rng, n):
    """Filter-like occupancy course: relax toward piecewise targets, then add noise."""
    base = rng.choice([0.02, 0.5, 0.95, rng.uniform(0, 1)])
    target = np.full(n, base)
    for _ in range(rng.integers(0, 4)):
        a = rng.integers(0, n)
        target[a : a + rng.integers(2, 25)] = rng.uniform(0.3, 1.0)
    out = np.empty(n)
    v = base
    for t in range(n):
        v += 0.5 * (target[t] - v)
        out[t] = v
    out += rng.normal(0, 0.02, n)
    return np.clip(out, 0, 1).astype(np.float32).astype(np.float64)


def world_frames(signals, offsets, grid):
    """Frames whose cell (i, j) shows world cell (i + offset_e, j + offset_n)."""
    frames = []
    for t, off in enumerate(offsets):
        ch = unknown_channels(grid).astype(np.float64)
        for i in range(grid.width_cells):
            for j in range(grid.height_cells):
                p = signals[(i + off[0], j + off[1])][t]
                ch[0, i, j], ch[1, i, j] = p, 1 - p
        frames.append(DogmaFrame(grid, 0.1 * t, off, ch))
    return frames


@pytest.mark.parametrize("seed", range(4))
def test_label_sample_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    grid = GridSpec(6, 5)
    n, t0 = 62, 16
    # drift east one cell every 12 frames so border cells drop in and out of view
    offsets = [(t // 12, 0) for t in range(n)]
    cells = {(e, j) for e in range(-1, 6 + n // 12 + 1) for j in range(5)}
    signals = {c: pulse_signal(rng, n) for c in cells}
    frames = world_frames(signals, offsets, grid)
    res = label_sample(frames, LabelSpec(t0))
    a = res.window_start
    ref = frames[t0].ego_offset
    b = min(n - 1, t0 + 30 + DetectorConfig().margin)
    steps = [5, 10, 15, 20, 25, 30]
    for i in range(6):
        for j in range(5):
            w = (i + ref[0], j)
            vals, valid = [], []
            for t in range(a, b + 1):
                ok = 0 <= w[0] - offsets[t][0] < 6
                valid.append(ok)
                vals.append(float(signals[w][t]) if ok else 0.5)
            ivs, (static, dyn, mask, fell) = oracles.label_cell(vals, valid, t0 - a, steps)
            assert res.intervals.get((i, j), []) == ivs, (i, j)
            assert res.labels.static_channel[i, j] == pytest.approx(static, abs=1e-6)
            assert bool(res.fallback[i, j]) == fell
            np.testing.assert_array_equal(res.labels.dynamic_mask[:, i, j], mask)
            np.testing.assert_allclose(res.labels.dynamic_channels[:, i, j], dyn, atol=1e-6)


def test_smooth_stack_matches_oracle_with_gaps():
    rng = np.random.default_rng(7)
    for _ in range(30):
        n = int(rng.integers(1, 40))
        vals = rng.random(n)
        valid = rng.random(n) > 0.3
        s, ok = smooth_stack(vals, valid, DetectorConfig())
        so, oko = oracles.smooth(list(vals), list(valid))
        np.testing.assert_array_equal(ok, oko)
        np.testing.assert_allclose(s, so, atol=1e-12)


def test_nms_matches_oracle_and_breaks_ties_early():
    rng = np.random.default_rng(8)
    cfg = DetectorConfig()
    for _ in range(50):
        k = np.round(rng.normal(0, 0.03, 40), 2)  # rounding forces ties
        got = np.flatnonzero(nms_events(k, cfg)).tolist()
        assert got == oracles.events(list(k))
    k = np.zeros(9)
    k[3] = k[4] = 0.5
    assert np.flatnonzero(nms_events(k, cfg)).tolist() == [3]


def step_series(up, down, n=60, lo=0.0, hi=1.0):
    v = np.full(n, lo)
    v[up:down] = hi
    return CellSeries((0, 0), v, np.ones(n, bool))


def test_step_pulse_gives_one_interval_covering_the_pulse():
    s = smooth_series(step_series(20, 35))
    ivs = detect_dynamic_intervals(s)
    assert len(ivs) == 1
    a, b = ivs[0]
    assert a < 20 and b >= 35


def test_constant_series_has_no_intervals():
    s = smooth_series(CellSeries((0, 0), np.full(50, 0.7), np.ones(50, bool)))
    assert detect_dynamic_intervals(s) == []
    level, fell = static_level(s, [], 10, 30)
    assert level == pytest.approx(0.7) and not fell


def test_hold_max_and_static_fallback():
    s = CellSeries((0, 0), np.array([0.1, 0.3, 0.9, 0.4, 0.1]), np.ones(5, bool))
    held = hold_max(s, [(1, 3)])
    np.testing.assert_allclose(held.values, [0.1, 0.9, 0.9, 0.9, 0.1])
    assert static_level(s, [(0, 4)], 0, 4) == (0.5, True)
    with pytest.raises(ValueError):
        hold_max(s, [(1, 3), (3, 4)])


def test_empty_series_rejected():
    with pytest.raises(ValueError):
        smooth_series(CellSeries((0, 0), np.zeros(0), np.zeros(0, bool)))
    with pytest.raises(ValueError):
        smooth_series(CellSeries((0, 0), np.zeros(4), np.zeros(4, bool)))


def test_insufficient_horizon():
    g = GridSpec(3, 3)
    frames = [DogmaFrame(g, 0.1 * t, (0, 0), unknown_channels(g)) for t in range(40)]
    with pytest.raises(InsufficientHorizon):
        label_sample(frames, LabelSpec(15))


def test_detector_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(nms_window=4)
    with pytest.raises(ValueError):
        DetectorConfig(curvature_threshold=0)


def test_label_file_roundtrip():
    rng = np.random.default_rng(3)
    grid = GridSpec(4, 3)
    signals = {(i, j): pulse_signal(rng, 50) for i in range(4) for j in range(3)}
    labels = label_sample(world_frames(signals, [(0, 0)] * 50, grid), LabelSpec(12)).labels
    buf = io.BytesIO()
    write_labels(labels, buf)
    buf.seek(0)
    back = read_labels(buf)
    np.testing.assert_array_equal(back.static_channel, labels.static_channel.astype(np.float32))
    np.testing.assert_array_equal(back.dynamic_mask, labels.dynamic_mask)
    assert (back.t0, back.step) == (12, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_label_invariants(seed):
    rng = np.random.default_rng(seed)
    grid = GridSpec(3, 2)
    signals = {(i, j): pulse_signal(rng, 50) for i in range(3) for j in range(2)}
    res = label_sample(world_frames(signals, [(0, 0)] * 50, grid), LabelSpec(12))
    lab = res.labels
    lab.validate()
    # dynamic values are zero off-mask and within the occupancy range on-mask
    assert np.all(lab.dynamic_channels[~lab.dynamic_mask] == 0)
    assert np.all((lab.dynamic_channels >= 0) & (lab.dynamic_channels <= 1))
    for ivs in res.intervals.values():
        for (a, b), (c, _) in zip(ivs, ivs[1:]):
            assert a <= b < c
    # curvature is zero at both ends
    k = curvature(np.linspace(0, 1, 10) ** 2, np.ones(10, bool))
    assert k[0] == k[-1] == 0


def trapezoid(n=60, up=10, down=30, lo=0.1, hi=0.9, ramp=5):
    v = np.full(n, lo)
    v[up : up + ramp] = np.linspace(lo, hi, ramp)
    v[up + ramp : down] = hi
    v[down : down + ramp] = np.linspace(hi, lo, ramp)
    return v


def series(v, valid=None):
    return CellSeries((0, 0), np.asarray(v, float), np.ones(len(v), bool) if valid is None else valid)


def test_smoothing_examples():
    const = smooth_series(series(np.full(30, 0.3)))
    np.testing.assert_allclose(const.values, 0.3, atol=1e-12)
    imp = np.zeros(41)
    imp[20] = 1.0
    out = smooth_series(series(imp)).values
    assert out.sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(out[14:27], oracles.gaussian_weights(2.0, 6), atol=1e-15)
    ramp = np.linspace(0, 1, 40)
    np.testing.assert_allclose(smooth_series(series(ramp)).values[6:-6], ramp[6:-6], atol=1e-12)


def test_trapezoid_interval_examples():
    cfg = DetectorConfig()
    (a, b), = detect_dynamic_intervals(smooth_series(series(trapezoid())))
    assert abs(a - 10) <= cfg.nms_window and abs(b - 34) <= cfg.nms_window
    v = trapezoid(90)
    v[55:] = trapezoid(35, up=0, down=11)
    ivs = detect_dynamic_intervals(smooth_series(series(v)))
    assert len(ivs) == 2 and ivs[0][1] < ivs[1][0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_interval_endpoints_robust_to_small_noise(seed):
    cfg = DetectorConfig()
    clean = detect_dynamic_intervals(smooth_series(series(trapezoid())))
    noisy = trapezoid() + np.random.default_rng(seed).normal(0, 0.02, 60)
    got = detect_dynamic_intervals(smooth_series(series(np.clip(noisy, 0, 1))))
    assert len(got) == len(clean)
    for (a, b), (c, d) in zip(got, clean):
        assert abs(a - c) <= cfg.nms_window and abs(b - d) <= cfg.nms_window


def test_hold_max_examples():
    v = series(trapezoid())
    assert np.array_equal(hold_max(v, []).values, v.values)
    held = hold_max(v, [(10, 34)])
    np.testing.assert_array_equal(held.values[10:35], 0.9)
    assert np.array_equal(hold_max(v, [(12, 12)]).values, v.values)
    np.testing.assert_array_equal(hold_max(held, [(10, 34)]).values, held.values)


def test_static_level_examples():
    assert static_level(series(trapezoid()), [(10, 34)], 5, 40) == (pytest.approx(0.1), False)
    rng = np.random.default_rng(11)
    v = 0.1 + rng.uniform(-0.05, 0.05, 60)
    v[20:30] = 0.9
    level, fell = static_level(series(v), [(20, 29)], 10, 30)
    expect = oracles.median([v[t] for t in range(11, 40) if not 20 <= t <= 29])
    assert level == expect and not fell


def test_all_static_scene_labels():
    rng = np.random.default_rng(12)
    levels = rng.choice([0.05, 0.5, 0.95], (4, 3))
    signals = {(i, j): np.full(50, levels[i, j]) for i in range(4) for j in range(3)}
    lab = label_sample(world_frames(signals, [(0, 0)] * 50, GridSpec(4, 3)), LabelSpec(12)).labels
    np.testing.assert_allclose(lab.static_channel, levels)
    assert not lab.dynamic_mask.any() and not lab.dynamic_channels.any()
    assert lab.K == 6


def test_short_crossing_labels_only_its_channel():
    # a car inside the cell strictly between 0.8 s and 1.2 s after t0 (frames t0+9..t0+11)
    t0, n = 20, 70
    v = np.full(n, 0.1)
    v[t0 + 9 : t0 + 12] = 0.9
    signals = {(0, 0): v}
    res = label_sample(world_frames(signals, [(0, 0)] * n, GridSpec(1, 1)), LabelSpec(t0))
    assert res.labels.dynamic_mask[:, 0, 0].tolist() == [False, True, False, False, False, False]
    assert res.labels.dynamic_channels[1, 0, 0] == pytest.approx(0.9)
    a = res.window_start
    ivs, (_, dyn, mask, _) = oracles.label_cell(list(v[a:]), [True] * (n - a), t0 - a, [5, 10, 15, 20, 25, 30])
    assert mask == res.labels.dynamic_mask[:, 0, 0].tolist()
