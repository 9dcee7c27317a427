"""Constant-velocity particle baseline.

Dynamic cells are picked by a velocity-statistics gate, particles are drawn
from each cell's velocity distribution and pushed forward in straight lines,
and the particles landing in each cell are counted per horizon.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .grid import COV, V_EAST, V_NORTH, VAR_EAST, VAR_NORTH, DogmaFrame, GridSpec

DEFAULT_HORIZONS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


@dataclass(frozen=True)
class BaselineConfig:
    particle_count: int = 100_000
    var_threshold: float = 3.0
    speed_threshold: float = 0.7
    horizons: tuple = DEFAULT_HORIZONS
    per_axis_variance: bool = False
    occupancy_threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "horizons", tuple(float(h) for h in self.horizons))
        if self.particle_count < 1:
            raise ValueError("particle_count must be >= 1")
        if not (self.var_threshold > 0 and self.speed_threshold > 0):
            raise ValueError("thresholds must be positive")
        if any(h < 0 for h in self.horizons):
            raise ValueError("horizons must be non-negative")


@dataclass
class ParticleSet:
    """Rows are ``[E, N, v_E, v_N]`` in world metres and m/s."""

    state: np.ndarray

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64).reshape(-1, 4)

    def __len__(self):
        return self.state.shape[0]


def classify_dynamic(frame: DogmaFrame, config: BaselineConfig = BaselineConfig()) -> np.ndarray:
    ch = frame.channels.astype(np.float64)
    if config.per_axis_variance:
        var_ok = (ch[VAR_EAST] < config.var_threshold) & (ch[VAR_NORTH] < config.var_threshold)
    else:
        var_ok = ch[VAR_EAST] + ch[VAR_NORTH] < config.var_threshold
    speed = np.hypot(ch[V_EAST], ch[V_NORTH])
    return var_ok & (speed > config.speed_threshold) & (frame.occupancy > config.occupancy_threshold)


def allocate(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer shares of ``total`` proportional to ``weights`` (largest remainder; ties to lower index)."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0 or w.sum() <= 0:
        return np.zeros(w.shape, dtype=np.int64)
    quota = w / w.sum() * total
    base = np.floor(quota).astype(np.int64)
    rest = total - int(base.sum())
    if rest > 0:
        order = np.argsort(-(quota - base), kind="stable")
        base[order[:rest]] += 1
    return base


def sample_particles(frame: DogmaFrame, mask: np.ndarray, config: BaselineConfig = BaselineConfig(),
                     seed: int = 0) -> ParticleSet:
    """Draw ``particle_count`` particles over the masked cells.

    Each cell uses its own generator seeded from ``(seed, flat cell index)``,
    so the result does not depend on the order cells are visited in.
    """
    cells = np.argwhere(mask)
    if len(cells) == 0:
        return ParticleSet(np.zeros((0, 4)))
    occ = frame.occupancy.astype(np.float64)
    counts = allocate(occ[mask], config.particle_count)
    ch = frame.channels.astype(np.float64)
    cw = frame.grid.cell_width
    W, H = frame.grid.shape
    out = np.empty((int(counts.sum()), 4))
    row = 0
    for (i, j), n in zip(cells, counts):
        if n == 0:
            continue
        rng = np.random.default_rng([seed, int(i) * H + int(j)])
        u = rng.random((n, 2))
        out[row : row + n, 0] = (frame.ego_offset[0] + i + u[:, 0]) * cw
        out[row : row + n, 1] = (frame.ego_offset[1] + j + u[:, 1]) * cw
        cov = np.array([[ch[VAR_EAST, i, j], ch[COV, i, j]], [ch[COV, i, j], ch[VAR_NORTH, i, j]]])
        mean = np.array([ch[V_EAST, i, j], ch[V_NORTH, i, j]])
        out[row : row + n, 2:] = mean + rng.standard_normal((n, 2)) @ _sqrt_psd(cov).T
        row += n
    return ParticleSet(out)


def _sqrt_psd(cov: np.ndarray) -> np.ndarray:
    """A matrix ``A`` with ``A A^T = cov``; tolerates singular covariances."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def propagate(particles: ParticleSet, dt: float) -> ParticleSet:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    s = particles.state.copy()
    s[:, :2] += s[:, 2:] * dt
    return ParticleSet(s)


def count_occupancy(particles: ParticleSet, grid: GridSpec, ego_offset) -> np.ndarray:
    """Per-cell particle counts, binned by ``floor``: a boundary point belongs to the cell whose lower edge it is."""
    W, H = grid.shape
    if len(particles) == 0:
        return np.zeros((W, H), dtype=np.int64)
    i = np.floor(particles.state[:, 0] / grid.cell_width).astype(np.int64) - ego_offset[0]
    j = np.floor(particles.state[:, 1] / grid.cell_width).astype(np.int64) - ego_offset[1]
    keep = (i >= 0) & (i < W) & (j >= 0) & (j < H)
    return np.bincount(i[keep] * H + j[keep], minlength=W * H).reshape(W, H)


@dataclass
class ParticlePrediction:
    horizons: tuple
    counts: np.ndarray  # (K, W, H) int64
    static: np.ndarray  # (W, H) P_O outside dynamic cells, else 0
    t0: int = 0

    def __eq__(self, other):
        return (isinstance(other, ParticlePrediction) and self.horizons == other.horizons
                and self.t0 == other.t0 and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.static, other.static))


def particle_predict(frame: DogmaFrame, config: BaselineConfig = BaselineConfig(), seed: int = 0,
                     t0: int = 0) -> ParticlePrediction:
    mask = classify_dynamic(frame, config)
    parts = sample_particles(frame, mask, config, seed)
    counts = np.stack([count_occupancy(propagate(parts, h), frame.grid, frame.ego_offset)
                       for h in config.horizons])
    static = np.where(mask, 0.0, frame.occupancy).astype(np.float32)
    return ParticlePrediction(config.horizons, counts, static, t0)


# ---------------------------------------------------------------------------
# count files: "DCNT", <IIII> (W, H, K, t0), K f32 horizons, f32 static plane, K u32 planes

COUNT_MAGIC = b"DCNT"
_CHEAD = struct.Struct("<IIII")


def write_counts(pred: ParticlePrediction, sink: BinaryIO) -> None:
    K, W, H = pred.counts.shape
    if pred.counts.max(initial=0) > np.iinfo(np.uint32).max:
        raise ValueError("counts exceed u32")
    sink.write(COUNT_MAGIC + _CHEAD.pack(W, H, K, pred.t0))
    sink.write(np.asarray(pred.horizons, dtype="<f4").tobytes())
    sink.write(np.ascontiguousarray(pred.static, dtype="<f4").tobytes())
    sink.write(np.ascontiguousarray(pred.counts, dtype="<u4").tobytes())


def read_counts(source: BinaryIO) -> ParticlePrediction:
    if source.read(4) != COUNT_MAGIC:
        raise ValueError("not a count file")
    W, H, K, t0 = _CHEAD.unpack(source.read(_CHEAD.size))

    def grab(dtype, n):
        buf = source.read(n * np.dtype(dtype).itemsize)
        if len(buf) != n * np.dtype(dtype).itemsize:
            raise ValueError("truncated count file")
        return np.frombuffer(buf, dtype=dtype)

    horizons = tuple(float(h) for h in grab("<f4", K))
    static = grab("<f4", W * H).reshape(W, H).astype(np.float32)
    counts = grab("<u4", K * W * H).reshape(K, W, H).astype(np.int64)
    return ParticlePrediction(horizons, counts, static, t0)


def save_counts(pred: ParticlePrediction, path) -> None:
    with open(path, "wb") as fh:
        write_counts(pred, fh)


def load_counts(path) -> ParticlePrediction:
    with open(path, "rb") as fh:
        return read_counts(fh)
