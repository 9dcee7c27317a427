"""Glue shared by the command line and the end-to-end checks."""

from __future__ import annotations

import numpy as np

from .evaluation import RocCurve, evaluate_prediction, pool_curves
from .nn.network import NetworkSpec
from .nn.train import predict_batch
from .particles import BaselineConfig, particle_predict


def horizon_frames(horizons, frame_period: float) -> list[int]:
    return [int(round(h / frame_period)) for h in horizons]


def evaluate_sequence(frames, t0s, net_output: np.ndarray | None, baseline: BaselineConfig,
                      seed: int = 0, gammas=None, horizons_idx=None):
    """ROC curves per horizon for one recorded sequence.

    ``net_output`` holds network outputs ``(len(t0s), 1+K, W, H)`` for the
    listed input frames (or ``None`` to skip the network).  Returns
    ``{"net": [[curve per t0] per horizon], "particles": [...]}``.
    """
    period = frames[0].grid.frame_period
    K = len(baseline.horizons)
    steps = horizon_frames(baseline.horizons, period)
    ks = range(K) if horizons_idx is None else horizons_idx
    out = {"net": {k: [] for k in ks}, "particles": {k: [] for k in ks}}
    for n, t0 in enumerate(t0s):
        frame = frames[t0]
        pp = particle_predict(frame, baseline, seed, t0)
        for k in ks:
            truth = frames[t0 + steps[k]]
            h = baseline.horizons[k]
            out["particles"][k].append(evaluate_prediction(pp.counts[k], pp.static, frame.ego_offset, truth,
                                                           gammas, True, h, "particles"))
            if net_output is not None:
                o = net_output[n]
                out["net"][k].append(evaluate_prediction(o[1 + k], o[0], frame.ego_offset, truth,
                                                         gammas, False, h, "net"))
    return out


def evaluate_sequences(params, spec: NetworkSpec, sequences: dict, t0s: dict,
                       baseline: BaselineConfig = BaselineConfig(), seed: int = 0, gammas=None,
                       horizons_idx=None) -> dict[str, list[RocCurve]]:
    """Pooled ROC curves (confusion counts summed over all inputs) per predictor and horizon."""
    acc = {"net": {}, "particles": {}}
    for name in sorted(sequences):
        frames = sequences[name]
        ts = t0s[name]
        out = None
        if params is not None:
            x = np.stack([frames[t].network_input() for t in ts]).astype(np.float32)
            out = predict_batch(params, spec, x)
        res = evaluate_sequence(frames, ts, out, baseline, seed, gammas, horizons_idx)
        for pred in acc:
            for k, curves in res[pred].items():
                acc[pred].setdefault(k, []).extend(curves)
    return {pred: [pool_curves(acc[pred][k]) for k in sorted(acc[pred]) if acc[pred][k]] for pred in acc}
