"""Grid geometry, the seven-channel dynamic occupancy frame and its binary format.

Arrays are indexed ``[e, n]``: the first axis grows east (width W), the second
grows north (height H), and index ``(0, 0)`` is the south-west corner.  A frame's
``ego_offset`` is the world cell of its grid index ``(0, 0)``, so world cell
``(E, N)`` sits at grid index ``(E - off_e, N - off_n)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterable, Sequence

import numpy as np

CHANNELS = ("m_occ", "m_free", "v_east", "v_north", "var_v_east", "var_v_north", "cov_v")
M_OCC, M_FREE, V_EAST, V_NORTH, VAR_EAST, VAR_NORTH, COV = range(7)
INPUT_CHANNELS = (M_OCC, M_FREE, V_EAST, V_NORTH)

DEFAULT_VAR_PRIOR = 10.0
_TOL = 1e-6


class FrameError(ValueError):
    """A frame violates a channel invariant or a record is malformed."""


@dataclass(frozen=True)
class GridSpec:
    width_cells: int
    height_cells: int
    cell_width: float = 0.15
    frame_period: float = 0.1

    def __post_init__(self):
        if self.width_cells < 1 or self.height_cells < 1:
            raise ValueError("grid must have at least one cell per axis")
        if not self.cell_width > 0 or not self.frame_period > 0:
            raise ValueError("cell_width and frame_period must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.width_cells, self.height_cells)

    def center_index(self) -> tuple[int, int]:
        return (self.width_cells // 2, self.height_cells // 2)


@dataclass(frozen=True, eq=False)
class DogmaFrame:
    grid: GridSpec
    timestamp: float
    ego_offset: tuple[int, int]
    channels: np.ndarray = field(repr=False)

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float32)
        if ch.shape != (7, *self.grid.shape):
            raise FrameError(f"channels shape {ch.shape} != (7, {self.grid.width_cells}, {self.grid.height_cells})")
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "ego_offset", (int(self.ego_offset[0]), int(self.ego_offset[1])))

    def __eq__(self, other):
        if not isinstance(other, DogmaFrame):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.timestamp == other.timestamp
            and self.ego_offset == other.ego_offset
            and np.array_equal(self.channels.view(np.uint32), other.channels.view(np.uint32))
        )

    def __getitem__(self, channel: int) -> np.ndarray:
        return self.channels[channel]

    @property
    def occupancy(self) -> np.ndarray:
        """Occupancy probability per cell."""
        return occupancy_probability(self.channels[M_OCC], self.channels[M_FREE])

    def network_input(self) -> np.ndarray:
        """The reduced (4, W, H) input: masses and mean velocities, covariances dropped."""
        return self.channels[list(INPUT_CHANNELS)]

    def validate(self) -> None:
        """Raise :class:`FrameError` naming the first offending cell."""
        ch = self.channels.astype(np.float64)
        if not np.all(np.isfinite(ch)):
            _fail("non-finite value", ~np.isfinite(ch).all(axis=0))
        mo, mf = ch[M_OCC], ch[M_FREE]
        for name, plane in (("m_occ", mo), ("m_free", mf)):
            _check(f"{name} outside [0, 1]", (plane < 0) | (plane > 1))
        _check("m_occ + m_free > 1", mo + mf > 1 + _TOL)
        _check("negative velocity variance", (ch[VAR_EAST] < 0) | (ch[VAR_NORTH] < 0))
        bound = ch[VAR_EAST] * ch[VAR_NORTH]
        _check("velocity covariance not positive semi-definite", ch[COV] ** 2 > bound * (1 + _TOL) + _TOL)

    def with_channels(self, channels: np.ndarray) -> "DogmaFrame":
        return replace(self, channels=channels)


def _check(what: str, bad: np.ndarray) -> None:
    if np.any(bad):
        _fail(what, bad)


def _fail(what: str, bad: np.ndarray):
    e, n = np.argwhere(bad)[0]
    raise FrameError(f"{what} at cell (e={e}, n={n})")


def occupancy_probability(m_occ, m_free):
    """``0.5 * m_occ + 0.5 * (1 - m_free)``; scalars or arrays."""
    mo = np.asarray(m_occ, dtype=np.float64)
    mf = np.asarray(m_free, dtype=np.float64)
    if np.any(~((mo >= 0) & (mo <= 1))) or np.any(~((mf >= 0) & (mf <= 1))):
        raise ValueError("masses must lie in [0, 1]")
    p = 0.5 * mo + 0.5 * (1.0 - mf)
    if p.ndim == 0:
        return float(p)
    return p


def unknown_channels(grid: GridSpec, var_prior: float = DEFAULT_VAR_PRIOR) -> np.ndarray:
    ch = np.zeros((7, *grid.shape), dtype=np.float32)
    ch[VAR_EAST] = var_prior
    ch[VAR_NORTH] = var_prior
    return ch


def _shifted(src: np.ndarray, de: int, dn: int, fill: np.ndarray) -> np.ndarray:
    """``out[..., i, j] = src[..., i + de, j + dn]`` where in range, else ``fill``."""
    out = np.array(fill, dtype=src.dtype, copy=True)
    w, h = src.shape[-2:]
    se = slice(max(de, 0), w + min(de, 0))
    sn = slice(max(dn, 0), h + min(dn, 0))
    de_ = slice(max(-de, 0), w + min(-de, 0))
    dn_ = slice(max(-dn, 0), h + min(-dn, 0))
    out[..., de_, dn_] = src[..., se, sn]
    return out


def shift_origin(frame: DogmaFrame, delta: tuple[int, int], var_prior: float = DEFAULT_VAR_PRIOR) -> DogmaFrame:
    """Move the grid origin by ``delta`` whole cells; positive ``dE`` moves the grid east.

    Cells that stay in view keep their world-aligned values, vacated cells are
    unknown (zero masses, zero velocity, ``var_prior`` variances).
    """
    de, dn = int(delta[0]), int(delta[1])
    w, h = frame.grid.shape
    if abs(de) >= w or abs(dn) >= h:
        raise ValueError(f"shift {delta} not smaller than grid {w}x{h}")
    if de == 0 and dn == 0:
        return frame
    channels = _shifted(frame.channels, de, dn, unknown_channels(frame.grid, var_prior))
    off = (frame.ego_offset[0] + de, frame.ego_offset[1] + dn)
    return DogmaFrame(frame.grid, frame.timestamp, off, channels)


# ---------------------------------------------------------------------------
# per-cell time series


@dataclass
class CellSeries:
    world_cell: tuple[int, int]
    values: np.ndarray
    valid: np.ndarray
    intervals: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape or self.values.ndim != 1:
            raise ValueError("values and valid must be 1-d and equally long")
        self.intervals = [(int(a), int(b)) for a, b in self.intervals]

    def __len__(self):
        return len(self.values)


def extract_cell_series(frames: Sequence[DogmaFrame], world_cell: tuple[int, int]) -> CellSeries:
    """Occupancy course of one fixed world cell through a moving grid."""
    if len(frames) == 0:
        raise ValueError("empty frame sequence")
    values = np.full(len(frames), 0.5)
    valid = np.zeros(len(frames), dtype=bool)
    for t, f in enumerate(frames):
        i = world_cell[0] - f.ego_offset[0]
        j = world_cell[1] - f.ego_offset[1]
        if 0 <= i < f.grid.width_cells and 0 <= j < f.grid.height_cells:
            valid[t] = True
            values[t] = occupancy_probability(f.channels[M_OCC, i, j], f.channels[M_FREE, i, j])
    return CellSeries(tuple(world_cell), values, valid)


def aligned_occupancy(frames: Sequence[DogmaFrame], ref_offset: tuple[int, int]):
    """Stack occupancy of all frames on the grid whose origin is ``ref_offset``.

    Returns ``(P, valid)`` with shape ``(T, W, H)``; cells a frame does not
    cover are invalid (and hold 0.5).
    """
    if len(frames) == 0:
        raise ValueError("empty frame sequence")
    grid = frames[0].grid
    prob = np.empty((len(frames), *grid.shape))
    valid = np.empty((len(frames), *grid.shape), dtype=bool)
    ones = np.ones(grid.shape, dtype=bool)
    for t, f in enumerate(frames):
        de = ref_offset[0] - f.ego_offset[0]
        dn = ref_offset[1] - f.ego_offset[1]
        if abs(de) >= grid.width_cells or abs(dn) >= grid.height_cells:
            prob[t] = 0.5
            valid[t] = False
            continue
        prob[t] = _shifted(f.occupancy, de, dn, np.full(grid.shape, 0.5))
        valid[t] = _shifted(ones, de, dn, np.zeros(grid.shape, dtype=bool))
    return prob, valid


def align_to(plane: np.ndarray, src_offset, dst_offset, fill=0.0):
    """Re-index a (..., W, H) plane from grid origin ``src_offset`` to ``dst_offset``."""
    de = dst_offset[0] - src_offset[0]
    dn = dst_offset[1] - src_offset[1]
    w, h = plane.shape[-2:]
    if abs(de) >= w or abs(dn) >= h:
        return np.full(plane.shape, fill, dtype=plane.dtype)
    return _shifted(plane, de, dn, np.full(plane.shape, fill, dtype=plane.dtype))


# ---------------------------------------------------------------------------
# label containers


@dataclass(frozen=True)
class LabelSpec:
    t0: int
    horizon: float = 3.0
    step: float = 0.5

    def __post_init__(self):
        if self.t0 < 0:
            raise ValueError("t0 must be a frame index")
        if not self.step > 0 or not self.horizon >= self.step:
            raise ValueError("need 0 < step <= horizon")

    @property
    def K(self) -> int:
        return int(round(self.horizon / self.step))

    def horizons(self) -> list[float]:
        return [self.step * (k + 1) for k in range(self.K)]

    def frame_steps(self, frame_period: float) -> list[int]:
        return [int(round(h / frame_period)) for h in self.horizons()]


@dataclass(eq=False)
class LabelTensor:
    static_channel: np.ndarray
    dynamic_channels: np.ndarray
    dynamic_mask: np.ndarray
    t0: int = 0
    step: float = 0.5

    def __post_init__(self):
        self.static_channel = np.asarray(self.static_channel, dtype=np.float32)
        self.dynamic_channels = np.asarray(self.dynamic_channels, dtype=np.float32)
        self.dynamic_mask = np.asarray(self.dynamic_mask, dtype=bool)
        if self.dynamic_channels.shape != self.dynamic_mask.shape:
            raise ValueError("dynamic channels and mask differ in shape")
        if self.dynamic_channels.shape[1:] != self.static_channel.shape:
            raise ValueError("dynamic channels do not match static channel grid")

    @property
    def K(self) -> int:
        return self.dynamic_channels.shape[0]

    def stacked(self) -> np.ndarray:
        """(1 + K, W, H) target in network channel order."""
        return np.concatenate([self.static_channel[None], self.dynamic_channels])

    def validate(self) -> None:
        for name, arr in (("static", self.static_channel), ("dynamic", self.dynamic_channels)):
            if np.any(~((arr >= 0) & (arr <= 1))):
                raise ValueError(f"{name} label values outside [0, 1]")
        if np.any(self.dynamic_channels[~self.dynamic_mask] != 0):
            raise ValueError("dynamic channel non-zero outside dynamic mask")

    def __eq__(self, other):
        return (
            isinstance(other, LabelTensor)
            and self.t0 == other.t0
            and self.step == other.step
            and np.array_equal(self.static_channel, other.static_channel)
            and np.array_equal(self.dynamic_channels, other.dynamic_channels)
            and np.array_equal(self.dynamic_mask, other.dynamic_mask)
        )


# ---------------------------------------------------------------------------
# binary frame records

FRAME_MAGIC = b"DOGM"
FRAME_VERSION = 1
_HEADER = struct.Struct("<HIIffdiiB")


def _f32_roundtrip(x: float) -> float:
    # shortest decimal that survives f32 storage, so 0.15 reads back as 0.15
    return float(str(np.float32(x)))


def write_frame(frame: DogmaFrame, sink: BinaryIO) -> None:
    g = frame.grid
    sink.write(FRAME_MAGIC)
    sink.write(_HEADER.pack(FRAME_VERSION, g.width_cells, g.height_cells, g.cell_width, g.frame_period,
                            frame.timestamp, frame.ego_offset[0], frame.ego_offset[1], 7))
    sink.write(np.ascontiguousarray(frame.channels, dtype="<f4").tobytes())


def read_frame(source: BinaryIO, validate: bool = True) -> DogmaFrame | None:
    """Read one record; ``None`` at clean end of stream."""
    magic = source.read(4)
    if not magic:
        return None
    if magic != FRAME_MAGIC:
        raise FrameError(f"bad frame magic {magic!r}")
    raw = source.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise FrameError("truncated frame header")
    version, w, h, cw, period, ts, oe, on, nch = _HEADER.unpack(raw)
    if version != FRAME_VERSION:
        raise FrameError(f"unsupported frame version {version}")
    if nch != 7:
        raise FrameError(f"expected 7 channels, header says {nch}")
    size = 7 * w * h * 4
    data = source.read(size)
    if len(data) != size:
        raise FrameError("truncated channel planes")
    grid = GridSpec(w, h, _f32_roundtrip(cw), _f32_roundtrip(period))
    channels = np.frombuffer(data, dtype="<f4").reshape(7, w, h).astype(np.float32)
    frame = DogmaFrame(grid, ts, (oe, on), channels)
    if validate:
        frame.validate()
    return frame


def write_sequence(frames: Iterable[DogmaFrame], path) -> None:
    with open(path, "wb") as fh:
        for f in frames:
            write_frame(f, fh)


def read_sequence(path, validate: bool = True) -> list[DogmaFrame]:
    frames = []
    with open(path, "rb") as fh:
        while True:
            try:
                f = read_frame(fh, validate)
            except FrameError as exc:
                raise FrameError(f"{path}: frame {len(frames)}: {exc}") from None
            if f is None:
                return frames
            frames.append(f)
