"""ROC evaluation of occupancy predictions against later perceived grids."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import DogmaFrame, align_to

TRUTH_THRESHOLD = 0.55
OVERLAY_STATIC_THRESHOLD = 0.6
OBSERVED_MASS = 0.1


def default_gammas(n: int = 99) -> np.ndarray:
    """``n`` thresholds evenly spaced strictly inside (0, 1)."""
    return np.arange(1, n + 1) / (n + 1)


def binarize_truth(frame: DogmaFrame) -> np.ndarray:
    return frame.occupancy > TRUTH_THRESHOLD


def observed(frame: DogmaFrame, min_mass: float = OBSERVED_MASS) -> np.ndarray:
    """Cells carrying at least ``min_mass`` of combined belief."""
    ch = frame.channels
    return (ch[0].astype(np.float64) + ch[1]) >= min_mass


@dataclass
class RocCurve:
    gammas: np.ndarray  # descending
    tpr: np.ndarray
    fpr: np.ndarray
    horizon: float = 0.0
    predictor: str = ""
    counts: np.ndarray | None = None  # (G, 4): tp, fp, fn, tn

    def points(self):
        return list(zip(self.gammas.tolist(), self.tpr.tolist(), self.fpr.tolist()))

    def tpr_at(self, fpr: float) -> float:
        """Interpolated true-positive rate at a given false-positive rate (anchored at (0, start) and (1, 1))."""
        f, t = _anchored(self)
        return float(np.interp(fpr, f, t))


def confusion(pred: np.ndarray, truth: np.ndarray, region: np.ndarray | None = None):
    """``(tp, fp, fn, tn)`` over the cells in ``region``."""
    if region is None:
        region = np.ones(truth.shape, dtype=bool)
    p, t = pred[region], truth[region]
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return tp, fp, fn, p.size - tp - fp - fn


def roc_curve(dyn_score: np.ndarray, static_pred: np.ndarray, truth: np.ndarray,
              gammas=None, region: np.ndarray | None = None, counts: bool = False,
              horizon: float = 0.0, predictor: str = "") -> RocCurve:
    """Sweep ``gammas`` over a dynamic score field.

    A cell is predicted occupied when ``static_pred > 0.55`` or its dynamic
    score exceeds the threshold.  For count grids (``counts=True``) the
    threshold is ``gamma * max(n)``, otherwise ``gamma`` itself.
    """
    dyn_score = np.asarray(dyn_score)
    truth = np.asarray(truth, dtype=bool)
    if dyn_score.shape != truth.shape or np.shape(static_pred) != truth.shape:
        raise ValueError(f"shape mismatch: dynamic {dyn_score.shape}, static {np.shape(static_pred)}, truth {truth.shape}")
    if region is None:
        region = np.ones(truth.shape, dtype=bool)
    elif region.shape != truth.shape:
        raise ValueError("region shape mismatch")
    g = np.sort(np.asarray(default_gammas() if gammas is None else gammas, dtype=np.float64))[::-1]
    static_occ = np.asarray(static_pred, dtype=np.float64)[region] > TRUTH_THRESHOLD
    s = dyn_score[region].astype(np.float64)
    t = truth[region]
    scale = float(s.max(initial=0.0)) if counts else 1.0
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    rows = np.empty((len(g), 4), dtype=np.int64)
    for k, gamma in enumerate(g):
        p = static_occ | (s > gamma * scale)
        tp = int(np.count_nonzero(p & t))
        fp = int(np.count_nonzero(p & ~t))
        rows[k] = (tp, fp, n_pos - tp, n_neg - fp)
    tpr = rows[:, 0] / n_pos if n_pos else np.zeros(len(g))
    fpr = rows[:, 1] / n_neg if n_neg else np.zeros(len(g))
    return RocCurve(g, tpr, fpr, horizon, predictor, rows)


def _anchored(curve: RocCurve):
    # gammas descend, so fpr ascends along the arrays
    f = np.concatenate([[0.0], curve.fpr, [1.0]])
    t = np.concatenate([[curve.tpr[0] if len(curve.tpr) else 0.0], curve.tpr, [1.0]])
    return f, t


def auc(curve: RocCurve) -> float:
    if len(curve.tpr) < 2:
        raise ValueError("AUC needs at least two curve points")
    f, t = _anchored(curve)
    return float(np.clip(np.sum(np.diff(f) * (t[1:] + t[:-1]) * 0.5), 0.0, 1.0))


def evaluation_region(pred_offset, truth_frame: DogmaFrame, shape, valid_mask=None) -> np.ndarray:
    """Cells of the prediction grid that the truth frame covers and observed."""
    seen = align_to(observed(truth_frame).astype(np.float32), truth_frame.ego_offset, pred_offset, 0.0) > 0.5
    if valid_mask is not None:
        seen &= valid_mask
    return seen


def aligned_truth(truth_frame: DogmaFrame, pred_offset) -> np.ndarray:
    """Binarized truth resampled onto the prediction grid by whole-cell offset."""
    return align_to(binarize_truth(truth_frame).astype(np.float32), truth_frame.ego_offset, pred_offset, 0.0) > 0.5


def evaluate_prediction(dyn_score, static_pred, pred_offset, truth_frame: DogmaFrame, gammas=None,
                        counts=False, horizon=0.0, predictor="", valid_mask=None) -> RocCurve:
    truth = aligned_truth(truth_frame, pred_offset)
    region = evaluation_region(pred_offset, truth_frame, truth.shape, valid_mask)
    return roc_curve(dyn_score, static_pred, truth, gammas, region, counts, horizon, predictor)


def pool_curves(curves) -> RocCurve:
    """Sum confusion counts of curves sharing the same gamma grid into one curve."""
    curves = list(curves)
    if not curves:
        raise ValueError("nothing to pool")
    g = curves[0].gammas
    if any(not np.array_equal(c.gammas, g) for c in curves):
        raise ValueError("curves use different gamma grids")
    rows = sum(c.counts for c in curves)
    pos = rows[:, 0] + rows[:, 2]
    neg = rows[:, 1] + rows[:, 3]
    tpr = np.divide(rows[:, 0], pos, out=np.zeros(len(g)), where=pos > 0)
    fpr = np.divide(rows[:, 1], neg, out=np.zeros(len(g)), where=neg > 0)
    return RocCurve(g, tpr, fpr, curves[0].horizon, curves[0].predictor, rows)


# ---------------------------------------------------------------------------
# output

METRIC_COLUMNS = ("predictor", "horizon", "gamma", "tpr", "fpr", "auc")


def export_metrics(curves, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for c in curves:
            a = auc(c)
            for gamma, tpr, fpr in c.points():
                w.writerow([c.predictor, repr(float(c.horizon)), repr(gamma), repr(tpr), repr(fpr), repr(a)])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in METRIC_COLUMNS[1:]:
            r[k] = float(r[k])
    return rows


def render_overlay(truth: np.ndarray, net_pred: np.ndarray, particle_pred: np.ndarray,
                   static_p: np.ndarray) -> np.ndarray:
    """RGB image (H, W, 3) uint8 with north up: red truth, green network, blue particles.

    Confident static structure (``static_p > 0.6``) is drawn white underneath.
    """
    shapes = {np.shape(a) for a in (truth, net_pred, particle_pred, static_p)}
    if len(shapes) != 1:
        raise ValueError(f"overlay inputs differ in shape: {sorted(shapes)}")
    background = np.asarray(static_p, dtype=np.float64) > OVERLAY_STATIC_THRESHOLD
    rgb = np.stack([truth, net_pred, particle_pred], axis=-1).astype(bool) | background[..., None]
    img = rgb.astype(np.uint8) * 255
    # grid is indexed [east, north]; images are [row, col] with row 0 at the top
    return np.ascontiguousarray(img.transpose(1, 0, 2)[::-1])


def write_ppm(image: np.ndarray, path) -> None:
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8)[: w * h * 3].reshape(h, w, 3)
