"""2-d convolution and nearest-neighbour upsampling, channels-last (NHWC).

Channels-last keeps the im2col copy cache-friendly (contiguous channel
runs) and feeds a single GEMM per convolution.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, _accum, _make, as_tensor


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of (B, H, W, C) with kernels (KH, KW, C, O)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.data.shape} and {w.data.shape}")
    bs, h, wd, c = x.data.shape
    kh, kw, c2, o = w.data.shape
    if c != c2:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape} vs kernel {w.data.shape}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.data.shape}, kernel {w.data.shape}")

    if padding:
        xp = np.zeros((bs, h + 2 * padding, wd + 2 * padding, c), dtype=x.data.dtype)
        xp[:, padding:padding + h, padding:padding + wd, :] = x.data
    else:
        xp = x.data
    # windows over the flattened (W, C) axis keep kw*c contiguous per copy run
    flat = xp.reshape(bs, xp.shape[1], xp.shape[2] * c)
    win = sliding_window_view(flat, kw * c, axis=2)[:, :, ::c * stride]
    col = np.empty((bs, oh, ow, kh, kw * c), dtype=x.data.dtype)
    for i in range(kh):
        col[:, :, :, i, :] = win[:, i:i + stride * oh:stride]
    col = col.reshape(bs * oh * ow, kh * kw * c)
    w2 = w.data.reshape(kh * kw * c, o)
    out_data = (col @ w2).reshape(bs, oh, ow, o)
    if b is not None:
        b = as_tensor(b)
        if b.data.shape != (o,):
            raise ShapeError(f"conv2d bias shape {b.data.shape} does not match {o} output channels")
        out_data += b.data
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g2 = g.reshape(bs * oh * ow, o)
        if w.requires_grad:
            _accum(w, (col.T @ g2).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 1, 2)))
        if x.requires_grad:
            dcol = (g2 @ w2.T).reshape(bs, oh, ow, kh, kw, c)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += dcol[:, :, :, i, j, :]
            if padding:
                dxp = dxp[:, padding:padding + h, padding:padding + wd, :]
            _accum(x, dxp)

    return _make(out_data, parents, bwd, "conv2d")


def upsample_nearest2d(x, scale=2):
    """Nearest-neighbour upsampling of (B, H, W, C) by an integer factor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest2d expects 4-d input, got {x.data.shape}")
    bs, h, w, c = x.data.shape
    out_data = x.data.repeat(scale, axis=1).repeat(scale, axis=2)

    def bwd(g):
        _accum(x, g.reshape(bs, h, scale, w, scale, c).sum(axis=(2, 4)))

    return _make(out_data, (x,), bwd, "upsample_nearest2d")
