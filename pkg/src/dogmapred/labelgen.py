"""Automatic static/dynamic label generation from occupancy time courses.

Per world cell: smooth P_O(t) in time, find rise/drop corners from the second
derivative with non-maximum suppression, pair them into dynamic intervals,
hold the interval maximum to undo filter lag, and take the median of the
remaining (static) samples inside the prediction window.

All per-cell steps are available on :class:`CellSeries`; :func:`build_labels`
runs the same definitions vectorized over a whole grid.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .grid import CellSeries, DogmaFrame, LabelSpec, LabelTensor, aligned_occupancy

UNKNOWN_LEVEL = 0.5


class InsufficientHorizon(ValueError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    smooth_sigma: float = 2.0
    smooth_radius: int = 6
    curvature_threshold: float = 0.01
    nms_window: int = 5
    min_peak_rise: float = 0.1

    def __post_init__(self):
        if min(self.smooth_sigma, self.smooth_radius, self.curvature_threshold,
               self.nms_window, self.min_peak_rise) <= 0:
            raise ValueError("detector parameters must be positive")
        if self.nms_window % 2 != 1:
            raise ValueError("nms_window must be odd")

    @property
    def margin(self) -> int:
        """Frames of context needed on each side of a labelled window."""
        return self.smooth_radius + self.nms_window


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    j = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (j / sigma) ** 2)
    return w / w.sum()


def smooth_stack(values: np.ndarray, valid: np.ndarray, config: DetectorConfig):
    """Normalized Gaussian smoothing along axis 0, ignoring invalid samples.

    Returns ``(smoothed, valid)``; invalid samples stay invalid and read 0.5.
    """
    r = config.smooth_radius
    w = gaussian_kernel(config.smooth_sigma, r)
    pad = [(r, r)] + [(0, 0)] * (values.ndim - 1)
    v = np.where(valid, values, 0.0)
    vp = np.pad(v, pad, mode="reflect")
    mp = np.pad(valid.astype(np.float64), pad, mode="reflect")
    n = values.shape[0]
    num = np.zeros(values.shape)
    den = np.zeros(values.shape)
    for j in range(2 * r + 1):
        num += w[j] * vp[j : j + n]
        den += w[j] * mp[j : j + n]
    out_valid = valid & (den > 0)
    out = np.full(values.shape, UNKNOWN_LEVEL)
    np.divide(num, den, out=out, where=out_valid)
    return out, out_valid


def smooth_series(series: CellSeries, config: DetectorConfig = DetectorConfig()) -> CellSeries:
    if len(series) == 0:
        raise ValueError("empty series")
    if not series.valid.any():
        raise ValueError("series has no valid samples")
    s, v = smooth_stack(series.values, series.valid, config)
    return CellSeries(series.world_cell, s, v, list(series.intervals))


def curvature(smoothed: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Central second difference along axis 0; zero where any stencil sample is invalid."""
    k = np.zeros(smoothed.shape)
    ok = valid[:-2] & valid[1:-1] & valid[2:]
    k[1:-1] = np.where(ok, smoothed[2:] - 2.0 * smoothed[1:-1] + smoothed[:-2], 0.0)
    return k


def nms_events(kappa: np.ndarray, config: DetectorConfig) -> np.ndarray:
    """Boolean event mask along axis 0.

    A frame is an event if ``|kappa|`` exceeds the threshold and is the maximum
    of its centred window; among equal maxima the earliest frame wins.
    """
    a = np.abs(kappa)
    ev = a > config.curvature_threshold
    h = config.nms_window // 2
    for d in range(1, h + 1):
        ev[:-d] &= a[:-d] >= a[d:]
        ev[d:] &= a[d:] > a[:-d]
    return ev


def pair_events(smoothed, valid, kappa, events, config: DetectorConfig) -> list[tuple[int, int]]:
    """Turn positive-curvature corners of one cell into dynamic intervals.

    A corner opens an interval when the signal climbs afterwards by at least
    ``min_peak_rise``; the next corner ending a drop of that size closes it.
    An unmatched rise runs to the last frame, a drop seen before any other
    qualifying corner is taken to have started at the first frame.
    """
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return []
    first, last = int(idx[0]), int(idx[-1])
    s = np.where(valid, smoothed, -np.inf)
    corners = [int(t) for t in np.flatnonzero(events) if kappa[t] > 0]
    intervals = []
    open_at = None
    seen = False
    for n, t in enumerate(corners):
        nxt = corners[n + 1] if n + 1 < len(corners) else last
        prv = corners[n - 1] if n > 0 else first
        rise = smoothed[t + 1] - smoothed[t] > 0 and s[t : nxt + 1].max() - smoothed[t] >= config.min_peak_rise
        drop = smoothed[t] - smoothed[t - 1] < 0 and s[prv : t + 1].max() - smoothed[t] >= config.min_peak_rise
        closed = False
        if drop and open_at is not None:
            intervals.append((open_at, t))
            open_at, closed = None, True
        elif drop and not seen:
            intervals.append((first, t))
            closed = True
        if rise and open_at is None:
            open_at = t + 1 if closed else t
            if open_at > last:
                open_at = None
        seen = seen or rise or drop
    if open_at is not None:
        intervals.append((open_at, last))
    return intervals


def detect_dynamic_intervals(series: CellSeries, config: DetectorConfig = DetectorConfig()):
    """Dynamic intervals of an already smoothed series, sorted and disjoint."""
    kappa = curvature(series.values, series.valid)
    events = nms_events(kappa, config)
    return pair_events(series.values, series.valid, kappa, events, config)


def _check_intervals(intervals, n):
    prev = -1
    for a, b in sorted(intervals):
        if a < 0 or b >= n or a > b:
            raise ValueError(f"interval {(a, b)} outside series of length {n}")
        if a <= prev:
            raise ValueError("overlapping intervals")
        prev = b


def hold_max(series: CellSeries, intervals) -> CellSeries:
    """Replace every sample inside an interval by the interval maximum."""
    _check_intervals(intervals, len(series))
    values = series.values.copy()
    for a, b in intervals:
        seg = series.valid[a : b + 1]
        if seg.any():
            values[a : b + 1] = np.where(seg, series.values[a : b + 1][seg].max(), values[a : b + 1])
    return CellSeries(series.world_cell, values, series.valid.copy(), list(intervals))


def static_level(series: CellSeries, intervals, t0: int, horizon: int) -> tuple[float, bool]:
    """Median of valid, non-dynamic samples strictly inside ``(t0, t0 + horizon)``.

    ``horizon`` is in frames.  Returns ``(level, fell_back)``; when no static
    sample exists the level is 0.5 and ``fell_back`` is true.
    """
    _check_intervals(intervals, len(series))
    keep = np.zeros(len(series), dtype=bool)
    keep[t0 + 1 : t0 + horizon] = True
    keep &= series.valid
    for a, b in intervals:
        keep[a : b + 1] = False
    if not keep.any():
        return UNKNOWN_LEVEL, True
    return float(np.median(series.values[keep])), False


# ---------------------------------------------------------------------------
# whole-grid labels


@dataclass
class LabelResult:
    labels: LabelTensor
    window_start: int
    intervals: dict = field(default_factory=dict)
    fallback: np.ndarray | None = None

    def dynamic_fraction(self) -> float:
        return float(self.labels.dynamic_mask.any(axis=0).mean())


def label_window(n_frames: int, spec: LabelSpec, frame_period: float, config: DetectorConfig):
    steps = spec.frame_steps(frame_period)
    t_end = spec.t0 + steps[-1]
    if t_end > n_frames - 1:
        raise InsufficientHorizon(
            f"t0={spec.t0} needs frame {t_end}, recording has {n_frames} frames")
    return max(0, spec.t0 - config.margin), min(n_frames - 1, t_end + config.margin), steps


def label_sample(frames: Sequence[DogmaFrame], spec: LabelSpec,
                 config: DetectorConfig = DetectorConfig()) -> LabelResult:
    """Labels for input frame ``spec.t0`` plus the intermediate per-cell results."""
    period = frames[0].grid.frame_period
    a, b, steps = label_window(len(frames), spec, period, config)
    window = frames[a : b + 1]
    prob, valid = aligned_occupancy(window, frames[spec.t0].ego_offset)
    smoothed, svalid = smooth_stack(prob, valid, config)
    kappa = curvature(smoothed, svalid)
    events = nms_events(kappa, config)

    in_dyn = np.zeros(prob.shape, dtype=bool)
    held = prob.copy()
    intervals = {}
    for i, j in np.argwhere(events.any(axis=0)):
        iv = pair_events(smoothed[:, i, j], svalid[:, i, j], kappa[:, i, j], events[:, i, j], config)
        if not iv:
            continue
        intervals[(int(i), int(j))] = iv
        col = prob[:, i, j]
        for s, e in iv:
            seg = valid[s : e + 1, i, j]
            in_dyn[s : e + 1, i, j] = True
            if seg.any():
                held[s : e + 1, i, j] = np.where(seg, col[s : e + 1][seg].max(), col[s : e + 1])

    t0 = spec.t0 - a
    horizon = steps[-1]
    keep = np.zeros(prob.shape, dtype=bool)
    keep[t0 + 1 : t0 + horizon] = True
    keep &= valid & ~in_dyn
    fallback = ~keep.any(axis=0)
    masked = np.where(keep, prob, np.nan)
    with warnings.catch_warnings():
        # all-NaN columns are the fallback cells, handled below
        warnings.simplefilter("ignore", RuntimeWarning)
        static = np.nanmedian(masked, axis=0)
    static[fallback] = UNKNOWN_LEVEL

    k_idx = [t0 + s for s in steps]
    mask = in_dyn[k_idx]
    dyn = np.where(mask, held[k_idx], 0.0)
    labels = LabelTensor(static, dyn, mask, spec.t0, spec.step)
    return LabelResult(labels, a, intervals, fallback)


def build_labels(frames: Sequence[DogmaFrame], spec: LabelSpec,
                 config: DetectorConfig = DetectorConfig()) -> LabelTensor:
    return label_sample(frames, spec, config).labels


# ---------------------------------------------------------------------------
# label files

LABEL_MAGIC = b"DLBL"
_LHEAD = struct.Struct("<IIIIf")


def write_labels(labels: LabelTensor, sink: BinaryIO) -> None:
    w, h = labels.static_channel.shape
    sink.write(LABEL_MAGIC)
    sink.write(_LHEAD.pack(w, h, labels.K, labels.t0, labels.step))
    sink.write(np.ascontiguousarray(labels.static_channel, dtype="<f4").tobytes())
    sink.write(np.ascontiguousarray(labels.dynamic_channels, dtype="<f4").tobytes())
    sink.write(np.ascontiguousarray(labels.dynamic_mask, dtype=np.uint8).tobytes())


def read_labels(source: BinaryIO) -> LabelTensor:
    if source.read(4) != LABEL_MAGIC:
        raise ValueError("bad label magic")
    raw = source.read(_LHEAD.size)
    if len(raw) != _LHEAD.size:
        raise ValueError("truncated label header")
    w, h, k, t0, step = _LHEAD.unpack(raw)
    need = 4 * w * h * (1 + k) + w * h * k
    data = source.read(need)
    if len(data) != need:
        raise ValueError("truncated label planes")
    static = np.frombuffer(data, "<f4", w * h).reshape(w, h)
    dyn = np.frombuffer(data, "<f4", k * w * h, offset=4 * w * h).reshape(k, w, h)
    mask = np.frombuffer(data, np.uint8, k * w * h, offset=4 * w * h * (1 + k)).reshape(k, w, h)
    out = LabelTensor(static, dyn, mask.astype(bool), t0, float(str(np.float32(step))))
    out.validate()
    return out


def save_labels(labels: LabelTensor, path) -> None:
    with open(path, "wb") as fh:
        write_labels(labels, fh)


def load_labels(path) -> LabelTensor:
    with open(path, "rb") as fh:
        return read_labels(fh)
