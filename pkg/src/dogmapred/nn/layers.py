"""Convolution, transposed convolution and pointwise layers on (B, C, W, H) arrays.

Convolution is plain cross-correlation implemented with an im2col gather and a
single batched matmul.  The transposed convolution is defined as the exact
adjoint of the strided convolution with padding ``(k - 1) // 2``, which makes
its output ``stride`` times the input size for odd kernels.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Gather sliding patches into ``(C*kh*kw, B*Wo*Ho)`` so the batch folds into one GEMM."""
    b, c, w, h = x.shape
    wo = _out_size(w, kh, stride, padding)
    ho = _out_size(h, kw, stride, padding)
    if wo < 1 or ho < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {w}x{h} with padding {padding}")
    xt = x.transpose(1, 0, 2, 3)
    if padding:
        xt = np.pad(xt, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((c, kh, kw, b, wo, ho), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + stride * (wo - 1) + 1 : stride, j : j + stride * (ho - 1) + 1 : stride]
    return cols.reshape(c * kh * kw, b * wo * ho)


def col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Scatter-add patches back; the adjoint of :func:`im2col`."""
    b, c, w, h = shape
    wo = _out_size(w, kh, stride, padding)
    ho = _out_size(h, kw, stride, padding)
    cols = cols.reshape(c, kh, kw, b, wo, ho)
    xp = np.zeros((c, b, w + 2 * padding, h + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * (wo - 1) + 1 : stride, j : j + stride * (ho - 1) + 1 : stride] += cols[:, i, j]
    if padding:
        xp = xp[:, :, padding:-padding, padding:-padding]
    return xp.transpose(1, 0, 2, 3)


def _to_rows(t: np.ndarray) -> np.ndarray:
    """(B, C, W, H) -> (C, B*W*H)."""
    return t.transpose(1, 0, 2, 3).reshape(t.shape[1], -1)


def _from_rows(rows: np.ndarray, b: int, w: int, h: int) -> np.ndarray:
    return rows.reshape(rows.shape[0], b, w, h).transpose(1, 0, 2, 3)


def _check_conv(x: np.ndarray, kernel: np.ndarray) -> None:
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError("conv expects 4-d input (B, C, W, H) and kernel (Cout, Cin, kh, kw)")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")


def conv_forward(x, kernel, bias=None, stride=1, padding=0, return_cols=False):
    """Cross-correlate ``x`` with ``kernel`` of shape (Cout, Cin, kh, kw)."""
    _check_conv(x, kernel)
    cout, _, kh, kw = kernel.shape
    b, _, w, h = x.shape
    cols = im2col(x, kh, kw, stride, padding)
    out = kernel.reshape(cout, -1) @ cols
    if bias is not None:
        if bias.shape != (cout,):
            raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
        out += bias[:, None]
    out = np.ascontiguousarray(_from_rows(out, b, _out_size(w, kh, stride, padding), _out_size(h, kw, stride, padding)))
    if return_cols:
        return out, cols
    return out


def conv_backward(dout, x, kernel, stride=1, padding=0, cols=None):
    """Return ``(dx, dkernel, dbias)`` for :func:`conv_forward`."""
    _check_conv(x, kernel)
    cout, _, kh, kw = kernel.shape
    if cols is None:
        cols = im2col(x, kh, kw, stride, padding)
    if dout.shape[0] * dout.shape[2] * dout.shape[3] != cols.shape[1] or dout.shape[1] != cout:
        raise ShapeError(f"upstream gradient shape {dout.shape} does not match conv output")
    d2 = _to_rows(dout)
    dkernel = (d2 @ cols.T).reshape(kernel.shape)
    dbias = d2.sum(axis=1)
    dcols = kernel.reshape(cout, -1).T @ d2
    dx = np.ascontiguousarray(col2im(dcols, x.shape, kh, kw, stride, padding))
    return dx, dkernel, dbias


def deconv_padding(kernel_size: int) -> int:
    return (kernel_size - 1) // 2


def deconv_forward(x, kernel, stride=1, bias=None):
    """Transposed convolution; ``kernel`` has shape (Cin, Cout, kh, kw).

    Output spatial size is ``stride`` times the input size.  The result is the
    adjoint of ``conv_forward(., kernel, stride=stride, padding=(k-1)//2)``.
    """
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"deconv input {x.shape} incompatible with kernel {kernel.shape}")
    cin, cout, kh, kw = kernel.shape
    pad = deconv_padding(kh)
    if kh - 2 * pad > stride or kw - 2 * deconv_padding(kw) > stride:
        raise ShapeError(f"kernel {kh}x{kw} cannot be inverted at stride {stride}")
    b, _, w, h = x.shape
    out_shape = (b, cout, w * stride, h * stride)
    dcols = kernel.reshape(cin, -1).T @ _to_rows(x)
    out = np.ascontiguousarray(col2im(dcols, out_shape, kh, kw, stride, pad))
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def deconv_backward(dout, x, kernel, stride=1):
    """Return ``(dx, dkernel, dbias)`` for :func:`deconv_forward`."""
    cin, cout, kh, kw = kernel.shape
    pad = deconv_padding(kh)
    dx, cols = conv_forward(dout, kernel, None, stride, pad, return_cols=True)
    dkernel = (_to_rows(x) @ cols.T).reshape(kernel.shape)
    dbias = dout.sum(axis=(0, 2, 3))
    return dx, dkernel, dbias


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, y):
    return dout * (y > 0)


def logistic(x):
    # split by sign for overflow safety
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logistic_backward(dout, y):
    return dout * y * (1.0 - y)
