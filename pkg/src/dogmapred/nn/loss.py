"""Class-balanced least-squares loss over static and per-horizon dynamic channels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossWeights:
    """``lambda_static`` scales the static channel; ``lambda_k[k]`` boosts dynamic cells of horizon k."""

    lambda_static: float = 1.0
    lambda_k: tuple = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0)

    def __post_init__(self):
        object.__setattr__(self, "lambda_k", tuple(float(v) for v in self.lambda_k))
        if self.lambda_static < 0 or any(v < 0 for v in self.lambda_k):
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def linear(cls, K: int, base: float = 100.0, lambda_static: float = 1.0) -> "LossWeights":
        return cls(lambda_static, tuple(base * (k + 1) for k in range(K)))


@dataclass(frozen=True)
class LossValue:
    total: float
    static: float
    dynamic: float


def cell_weights(label_dynamic: np.ndarray, lambda_k) -> np.ndarray:
    """Per-cell factors ``|1 + lambda_k * P_d|`` for dynamic channels shaped (..., K, W, H)."""
    lam = np.asarray(lambda_k, dtype=np.float64).reshape(-1, 1, 1)
    if lam.shape[0] != label_dynamic.shape[-3]:
        raise ValueError(f"{lam.shape[0]} weights for {label_dynamic.shape[-3]} dynamic channels")
    return np.abs(1.0 + lam * label_dynamic)


def balanced_loss(pred: np.ndarray, label: np.ndarray, weights: LossWeights):
    """Loss and ``dL/dpred`` for predictions and targets shaped ``(1+K, W, H)`` or ``(B, 1+K, W, H)``.

    Channel 0 is the static channel.  Batched input sums over the batch.
    Returns ``(LossValue, grad)`` with ``grad`` in float64.
    """
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    if pred.shape != label.shape:
        raise ValueError(f"prediction {pred.shape} vs label {label.shape}")
    if pred.ndim not in (3, 4) or pred.shape[-3] < 1:
        raise ValueError(f"expected (1+K, W, H) or (B, 1+K, W, H), got {pred.shape}")
    if not (np.isfinite(pred).all() and np.isfinite(label).all()):
        raise ValueError("non-finite values in loss input")
    diff = label - pred
    w = np.empty_like(diff)
    w[..., 0, :, :] = weights.lambda_static
    w[..., 1:, :, :] = cell_weights(label[..., 1:, :, :], weights.lambda_k)
    sq = w * diff * diff
    l_s = 0.5 * float(sq[..., 0, :, :].sum())
    l_d = 0.5 * float(sq[..., 1:, :, :].sum())
    return LossValue(l_s + l_d, l_s, l_d), -w * diff
