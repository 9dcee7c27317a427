"""Turning simulated scenes into labelled training samples, and splitting them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import DogmaFrame, LabelSpec, LabelTensor
from .labelgen import DetectorConfig, label_sample
from .sim.scenes import STREET, make_scene
from .sim.simulate import SimConfig, simulate


@dataclass(frozen=True)
class Sample:
    scene: str
    t0: int
    frame: DogmaFrame
    labels: LabelTensor


def training_sim_config() -> SimConfig:
    return SimConfig(grid=STREET.grid(), occlusion_enabled=False)


# a simulated recording starts from an unknown map; its first second of frames
# shows every occupied cell rising out of 0.5, which the detector would read as motion
WARMUP_FRAMES = 10


def sample_times(n_frames: int, horizon_frames: int, margin: int, stride: int,
                 warmup: int = WARMUP_FRAMES) -> list[int]:
    """Input frames with a full horizon ahead and filter history behind.

    The label window of each sample (``margin`` frames before ``t0``) stays
    clear of the first ``warmup`` frames.
    """
    return list(range(warmup + margin, n_frames - horizon_frames, stride))


def scene_samples(name: str, frames, t0s, horizon: float = 3.0, step: float = 0.5,
                  detector: DetectorConfig = DetectorConfig()) -> list[Sample]:
    return [Sample(name, t0, frames[t0], label_sample(frames, LabelSpec(t0, horizon, step), detector).labels)
            for t0 in t0s]


def build_samples(scenes, sim_config: SimConfig | None = None, stride: int = 5, horizon: float = 3.0,
                  step: float = 0.5, detector: DetectorConfig = DetectorConfig(), keep_sequences: bool = False):
    """Simulate ``(family, seed)`` pairs and label every ``stride``-th admissible frame.

    Returns ``(samples, sequences)``; ``sequences`` maps scene names to their
    full frame lists only when ``keep_sequences`` is set (they are large).
    """
    sim_config = sim_config or training_sim_config()
    samples, sequences = [], {}
    hf = int(round(horizon / sim_config.grid.frame_period))
    for family, seed in scenes:
        name = f"{family}-{seed}"
        frames, _, _ = simulate(make_scene(family, seed), sim_config)
        if keep_sequences:
            sequences[name] = frames
        samples += scene_samples(name, frames, sample_times(len(frames), hf, detector.margin, stride),
                                 horizon, step, detector)
    return samples, sequences


def _shares(n: int, fractions) -> list[int]:
    quota = [f * n for f in fractions]
    base = [math.floor(q) for q in quota]
    order = sorted(range(len(quota)), key=lambda i: (-(quota[i] - base[i]), i))
    for i in order[: n - sum(base)]:
        base[i] += 1
    return base


def split_dataset(samples, fractions=(0.8, 0.1, 0.1), seed: int = 0, groups=None):
    """Shuffled disjoint ``(train, test, validation)`` index lists covering all samples.

    With ``groups`` (one key per sample, e.g. the scene name) whole groups are
    assigned together so neighbouring frames of one scene never straddle splits.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    n = samples if isinstance(samples, int) else len(samples)
    rng = np.random.default_rng(seed)
    if groups is None:
        order = rng.permutation(n).tolist()
        a, b, _ = _shares(n, fractions)
        return sorted(order[:a]), sorted(order[a : a + b]), sorted(order[a + b :])
    if len(groups) != n:
        raise ValueError("one group key per sample required")
    keys = sorted(set(groups))
    perm = [keys[i] for i in rng.permutation(len(keys))]
    a, b, _ = _shares(len(keys), fractions)
    where = {k: 0 for k in perm[:a]} | {k: 1 for k in perm[a : a + b]} | {k: 2 for k in perm[a + b :]}
    parts = ([], [], [])
    for i, g in enumerate(groups):
        parts[where[g]].append(i)
    return parts
