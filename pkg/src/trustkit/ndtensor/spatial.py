"""Spatial operations on (C, H, W) tensors: convolution, pooling, resizing."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, ParameterError
from .tensor import Tensor, _accumulate, _make


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(C*kh*kw, oh*ow) patch matrix of a padded (C, H, W) array."""
    c = xp.shape[0]
    buf = np.empty((c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            buf[:, i, j] = xp[:, i : i + oh * stride : stride, j : j + ow * stride : stride]
    return buf.reshape(c * kh * kw, oh * ow)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (C_in, H, W) input with (C_out, C_in, kh, kw) kernel."""
    if x.data.ndim != 3 or kernel.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects (C,H,W) and (Cout,Cin,kh,kw), got {x.data.shape} and {kernel.data.shape}"
        )
    c_in, h, w = x.data.shape
    c_out, kc, kh, kw = kernel.data.shape
    if kc != c_in:
        raise DimensionError(f"conv2d channel mismatch: input {c_in}, kernel expects {kc}")
    if stride < 1:
        raise ParameterError(f"conv2d stride must be >= 1, got {stride}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    if padding:
        xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    w2 = kernel.data.reshape(c_out, -1)
    data = (w2 @ cols).reshape(c_out, oh, ow)

    def vjp(g):
        g2 = g.reshape(c_out, -1)
        if kernel.requires_grad:
            _accumulate(kernel, (g2 @ cols.T).reshape(kernel.data.shape))
        if x.requires_grad:
            dwin = (w2.T @ g2).reshape(c_in, kh, kw, oh, ow)
            gxp = np.zeros((c_in, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + oh * stride : stride, j : j + ow * stride : stride] += dwin[:, i, j]
            if padding:
                gxp = gxp[:, padding : padding + h, padding : padding + w]
            _accumulate(x, gxp)

    return _make(data, (x, kernel), vjp)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Replicate each pixel of a (C, H, W) map into a factor x factor block."""
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"upsample factor must be a positive integer, got {factor}")
    factor = int(factor)
    if x.data.ndim != 3:
        raise DimensionError(f"upsample expects (C,H,W), got {x.data.shape}")
    c, h, w = x.data.shape
    data = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def vjp(g):
        if x.requires_grad:
            _accumulate(x, g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)))

    return _make(data, (x,), vjp)


def _pool_bounds(size: int, out: int) -> list[tuple[int, int]]:
    return [(i * size // out, (i + 1) * size // out) for i in range(out)]


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Average-pool a (C, H, W) map to a fixed (C, out_h, out_w) grid.

    Cell (i, j) averages rows [floor(i*H/out_h), floor((i+1)*H/out_h)) and
    the analogous column window, so the output size never depends on the
    input size.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"adaptive_avg_pool expects (C,H,W), got {x.data.shape}")
    c, h, w = x.data.shape
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"pool output extents must be positive, got {out_h}x{out_w}")
    if out_h > h or out_w > w:
        raise ParameterError(
            f"pool output {out_h}x{out_w} exceeds input {h}x{w}"
        )

    if h % out_h == 0 and w % out_w == 0:
        fh, fw = h // out_h, w // out_w
        data = x.data.reshape(c, out_h, fh, out_w, fw).mean(axis=(2, 4))

        def vjp(g):
            if x.requires_grad:
                gx = np.broadcast_to(
                    g[:, :, None, :, None] / (fh * fw), (c, out_h, fh, out_w, fw)
                ).reshape(c, h, w)
                _accumulate(x, gx.copy())

        return _make(data, (x,), vjp)

    rows = _pool_bounds(h, out_h)
    cols = _pool_bounds(w, out_w)
    data = np.empty((c, out_h, out_w))
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            data[:, i, j] = x.data[:, r0:r1, c0:c1].mean(axis=(1, 2))

    def vjp(g):
        if x.requires_grad:
            gx = np.zeros((c, h, w))
            for i, (r0, r1) in enumerate(rows):
                for j, (c0, c1) in enumerate(cols):
                    gx[:, r0:r1, c0:c1] += g[:, i, j, None, None] / ((r1 - r0) * (c1 - c0))
            _accumulate(x, gx)

    return _make(data, (x,), vjp)


def _bilinear_matrix(size: int, out: int) -> np.ndarray:
    """(out, size) interpolation matrix with half-pixel sample centers."""
    src = (np.arange(out) + 0.5) * (size / out) - 0.5
    src = np.clip(src, 0.0, size - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, size - 1)
    frac = src - lo
    mat = np.zeros((out, size))
    np.add.at(mat, (np.arange(out), lo), 1.0 - frac)
    np.add.at(mat, (np.arange(out), hi), frac)
    return mat


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinearly resample a (C, H, W) map to (C, out_h, out_w).

    Separable: out = R x C^T per channel, for the two per-axis
    interpolation matrices.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"resize_bilinear expects (C,H,W), got {x.data.shape}")
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"resize extents must be positive, got {out_h}x{out_w}")
    _, h, w = x.data.shape
    rows = _bilinear_matrix(h, out_h)
    cols_t = _bilinear_matrix(w, out_w).T
    data = np.matmul(np.matmul(rows, x.data), cols_t)

    def vjp(g):
        if x.requires_grad:
            _accumulate(x, np.matmul(np.matmul(rows.T, g), cols_t.T))

    return _make(data, (x,), vjp)
