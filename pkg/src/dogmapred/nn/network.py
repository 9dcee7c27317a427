"""Encoder-decoder with strided-convolution downscaling, learnable deconvolution
upscaling and channel-concatenated bypass connections."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import layers as L


@dataclass(frozen=True)
class NetworkSpec:
    input_channels: int = 4
    stage_widths: tuple = (16, 32, 64)
    kernel_size: int = 3
    output_channels: int = 7
    skip_connections: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stage_widths", tuple(int(w) for w in self.stage_widths))
        if not self.stage_widths or any(w < 1 for w in self.stage_widths):
            raise ValueError("stage widths must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be a positive odd integer")
        if self.input_channels < 1 or self.output_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def stage_count(self) -> int:
        return len(self.stage_widths)

    def check_input(self, shape) -> None:
        if len(shape) != 4 or shape[1] != self.input_channels:
            raise L.ShapeError(f"expected input (B, {self.input_channels}, W, H), got {shape}")
        div = 2 ** self.stage_count
        if shape[2] % div or shape[3] % div:
            raise L.ShapeError(f"grid {shape[2]}x{shape[3]} not divisible by {div}")


def layer_manifest(spec: NetworkSpec) -> list[tuple[str, str, tuple]]:
    """Ordered ``(name, kind, kernel_shape)`` for every learnable layer."""
    k = spec.kernel_size
    out = []
    cin = spec.input_channels
    for s, w in enumerate(spec.stage_widths):
        out.append((f"enc{s}.conv0", "conv", (w, cin, k, k)))
        out.append((f"enc{s}.conv1", "conv", (w, w, k, k)))
        out.append((f"enc{s}.down", "conv", (w, w, k, k)))
        cin = w
    for s in reversed(range(spec.stage_count)):
        w = spec.stage_widths[s]
        out.append((f"dec{s}.up", "deconv", (cin, w, k, k)))
        cat = 2 * w if spec.skip_connections else w
        out.append((f"dec{s}.conv0", "conv", (w, cat, k, k)))
        out.append((f"dec{s}.conv1", "conv", (w, w, k, k)))
        cin = w
    out.append(("head", "conv", (spec.output_channels, cin, 1, 1)))
    return out


def init_params(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-normal kernels, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, kind, shape in layer_manifest(spec):
        fan_in = shape[1] * shape[2] * shape[3] if kind == "conv" else shape[0] * shape[2] * shape[3] / 4
        params[name + ".w"] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[name + ".b"] = np.zeros(shape[0] if kind == "conv" else shape[1], dtype=dtype)
    return params


class EncoderDecoder:
    """Stateless forward/backward over a parameter dict.

    ``forward`` returns the logistic outputs and a tape that ``backward`` consumes.
    """

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.pad = spec.kernel_size // 2

    def forward(self, params, x):
        self.spec.check_input(x.shape)
        tape = []
        skips = []
        h = x
        for s in range(self.spec.stage_count):
            for name in ("conv0", "conv1"):
                h = self._conv_relu(params, f"enc{s}.{name}", h, 1, tape)
            skips.append(h)
            h = self._conv_relu(params, f"enc{s}.down", h, 2, tape)
        for s in reversed(range(self.spec.stage_count)):
            name = f"dec{s}.up"
            y = L.relu(L.deconv_forward(h, params[name + ".w"], 2, params[name + ".b"]))
            tape.append(("deconv", name, h, y))
            if self.spec.skip_connections:
                h = np.concatenate([y, skips[s]], axis=1)
                tape.append(("concat", s, y.shape[1]))
            else:
                h = y
            for sub in ("conv0", "conv1"):
                h = self._conv_relu(params, f"dec{s}.{sub}", h, 1, tape)
        z, cols = L.conv_forward(h, params["head.w"], params["head.b"], 1, 0, return_cols=True)
        out = L.logistic(z)
        tape.append(("head", "head", h, cols, out))
        return out, tape

    def _conv_relu(self, params, name, h, stride, tape):
        y, cols = L.conv_forward(h, params[name + ".w"], params[name + ".b"], stride, self.pad, return_cols=True)
        y = L.relu(y)
        tape.append(("conv", name, h, cols, y, stride))
        return y

    def backward(self, params, tape, dout):
        """Gradients w.r.t. all parameters given ``dL/d(output probabilities)``."""
        grads = {}
        skip_grads = {}
        _, name, h, cols, out = tape[-1]
        dz = L.logistic_backward(dout, out)
        dh, grads[name + ".w"], grads[name + ".b"] = L.conv_backward(dz, h, params[name + ".w"], 1, 0, cols)
        for entry in reversed(tape[:-1]):
            kind = entry[0]
            if kind == "conv":
                _, name, h, cols, y, stride = entry
                dy = L.relu_backward(dh, y)
                dh, grads[name + ".w"], grads[name + ".b"] = L.conv_backward(
                    dy, h, params[name + ".w"], stride, self.pad, cols
                )
                if name.startswith("enc") and name.endswith(".down"):
                    s = int(name[3 : name.index(".")])
                    if s in skip_grads:
                        dh = dh + skip_grads.pop(s)
            elif kind == "concat":
                _, s, n_up = entry
                skip_grads[s] = dh[:, n_up:]
                dh = dh[:, :n_up]
            elif kind == "deconv":
                _, name, h, y = entry
                dy = L.relu_backward(dh, y)
                dh, grads[name + ".w"], grads[name + ".b"] = L.deconv_backward(dy, h, params[name + ".w"], 2)
        return grads


def network_forward(params, x, spec: NetworkSpec):
    return EncoderDecoder(spec).forward(params, x)[0]


_MAGIC = b"DNET"
_VERSION = 1


def save_checkpoint(path, params, spec: NetworkSpec) -> None:
    """Write parameters as little-endian f32 planes following a layer manifest."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HBBBBB", _VERSION, spec.input_channels, spec.output_channels,
                             spec.stage_count, spec.kernel_size, int(spec.skip_connections)))
        fh.write(struct.pack(f"<{spec.stage_count}I", *spec.stage_widths))
        names = [n for n, _, _ in layer_manifest(spec)]
        fh.write(struct.pack("<I", 2 * len(names)))
        for base in names:
            for suffix in (".w", ".b"):
                key = base + suffix
                arr = np.ascontiguousarray(params[key], dtype="<f4")
                enc = key.encode()
                fh.write(struct.pack("<H", len(enc)) + enc)
                fh.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, NetworkSpec]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a network checkpoint (bad magic)")
    pos = 4
    version, cin, cout, stages, ksize, skip = struct.unpack_from("<HBBBBB", data, pos)
    pos += 7
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    widths = struct.unpack_from(f"<{stages}I", data, pos)
    pos += 4 * stages
    spec = NetworkSpec(cin, widths, ksize, cout, bool(skip))
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            key = data[pos : pos + n].decode()
            pos += n
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 4
            if pos + size > len(data):
                raise ValueError(f"{path}: truncated parameter {key}")
            params[key] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=pos).reshape(shape).astype(np.float32)
            pos += size
    except struct.error as exc:
        raise ValueError(f"{path}: truncated checkpoint") from exc
    expected = {n + s for n, _, _ in layer_manifest(spec) for s in (".w", ".b")}
    if set(params) != expected:
        raise ValueError(f"{path}: layer manifest mismatch")
    return params, spec
