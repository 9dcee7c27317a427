"""Minibatch ADAM training and inference for the encoder-decoder."""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..grid import DogmaFrame, LabelTensor
from .adam import AdamState, adam_step
from .loss import LossWeights, balanced_loss
from .network import EncoderDecoder, NetworkSpec, init_params, save_checkpoint


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    seed: int = 0
    weights: LossWeights | None = None
    checkpoint_every: int = 0
    out_dir: str | None = None
    log_every: int = 0


@dataclass
class LossTrace:
    total: list = field(default_factory=list)
    static: list = field(default_factory=list)
    dynamic: list = field(default_factory=list)

    def append(self, value) -> None:
        self.total.append(value.total)
        self.static.append(value.static)
        self.dynamic.append(value.dynamic)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "L", "L_s", "L_d"])
            for i, row in enumerate(zip(self.total, self.static, self.dynamic)):
                w.writerow([i, *(repr(float(v)) for v in row)])


@dataclass(frozen=True)
class _Mean:
    total: float
    static: float
    dynamic: float


def make_sample(frame: DogmaFrame, labels: LabelTensor):
    """Network input ``(4, W, H)`` and target ``(1+K, W, H)`` for one labelled frame."""
    if frame.grid.shape != labels.static_channel.shape:
        raise ValueError("frame and labels cover different grids")
    return frame.network_input().astype(np.float32), labels.stacked().astype(np.float32)


def _stack(dataset):
    xs = np.stack([np.asarray(x, dtype=np.float32) for x, _ in dataset])
    ys = np.stack([np.asarray(y, dtype=np.float32) for _, y in dataset])
    return xs, ys


def train(dataset, spec: NetworkSpec, config: TrainConfig = TrainConfig(), params=None):
    """Fit the network to ``(input, target)`` pairs; returns ``(params, trace)``.

    Minibatches are drawn by walking seeded per-epoch permutations.  The
    reported loss is the batch mean.  ``params`` may carry a warm start.
    """
    if not dataset:
        raise ValueError("empty training set")
    xs, ys = _stack(dataset)
    if xs.shape[1] != spec.input_channels or ys.shape[1] != spec.output_channels:
        raise ValueError(f"dataset channels {xs.shape[1]}->{ys.shape[1]} do not fit {spec}")
    if xs.shape[2:] != ys.shape[2:]:
        raise ValueError("input and target grids differ")
    spec.check_input(xs.shape)
    K = spec.output_channels - 1
    weights = config.weights or LossWeights.linear(K)
    if len(weights.lambda_k) != K:
        raise ValueError(f"{len(weights.lambda_k)} dynamic weights for {K} channels")

    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_params(spec, seed=config.seed)
    params = {k: np.array(v, dtype=np.float32) for k, v in params.items()}
    net = EncoderDecoder(spec)
    state = AdamState(lr=config.lr)
    trace = LossTrace()
    n = len(xs)
    bs = min(config.batch_size, n)
    order = rng.permutation(n)
    pos = 0
    t_start = time.time()
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)

    for it in range(config.iterations):
        if pos + bs > n:
            order = rng.permutation(n)
            pos = 0
        idx = np.sort(order[pos : pos + bs])
        pos += bs
        out, tape = net.forward(params, xs[idx])
        value, grad = balanced_loss(out, ys[idx], weights)
        if not np.isfinite(value.total):
            raise TrainingDiverged(
                f"non-finite loss at iteration {it} (L_s={value.static}, L_d={value.dynamic}); "
                f"batch indices {idx.tolist()}")
        trace.append(_Mean(value.total / bs, value.static / bs, value.dynamic / bs))
        grads = net.backward(params, tape, (grad / bs).astype(np.float32))
        adam_step(params, grads, state)
        if config.log_every and (it + 1) % config.log_every == 0:
            print(f"iter {it + 1:6d}  L={trace.total[-1]:.4f}  ({time.time() - t_start:.0f}s)", flush=True)
        if config.out_dir and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            save_checkpoint(os.path.join(config.out_dir, f"ckpt_{it + 1:06d}.dnet"), params, spec)

    if config.out_dir:
        save_checkpoint(os.path.join(config.out_dir, "final.dnet"), params, spec)
        trace.write_csv(os.path.join(config.out_dir, "loss.csv"))
    return params, trace


def predict_batch(params, spec: NetworkSpec, inputs: np.ndarray, batch_size: int = 8) -> np.ndarray:
    net = EncoderDecoder(spec)
    outs = [net.forward(params, inputs[i : i + batch_size])[0] for i in range(0, len(inputs), batch_size)]
    return np.concatenate(outs)


def predict(params, spec: NetworkSpec, frame: DogmaFrame, step: float = 0.5, t0: int = 0,
            grid=None) -> LabelTensor:
    """Static and per-horizon dynamic occupancy predicted from one frame.

    ``grid`` is the training grid; when given, a frame of another size is rejected.
    """
    if grid is not None and frame.grid.shape != grid.shape:
        raise ValueError(f"frame grid {frame.grid.shape} differs from training grid {grid.shape}")
    x = frame.network_input()[None].astype(next(iter(params.values())).dtype)
    if x.shape[1] != spec.input_channels:
        raise ValueError("frame does not provide the network's input channels")
    try:
        spec.check_input(x.shape)
    except ValueError as exc:
        raise ValueError(f"grid {frame.grid.shape} does not fit the network: {exc}") from None
    out = EncoderDecoder(spec).forward(params, x)[0][0]
    return LabelTensor(out[0], out[1:], np.ones(out[1:].shape, dtype=bool), t0, step)
