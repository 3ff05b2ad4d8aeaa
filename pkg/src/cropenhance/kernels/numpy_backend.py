"""Vectorized numpy implementations of the hot array kernels.

These are the fallback used when the compiled extension is unavailable.
All functions are pure array-in/array-out with no autodiff awareness;
gradient bookkeeping lives in :mod:`cropenhance.autodiff`.

Shape conventions: images and feature maps are channel-major (C, H, W),
convolution weights are (C_out, C_in, kH, kW). Sampling coordinates are
given in pixel units as float64 arrays; callers are responsible for any
normalized-to-pixel conversion.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _conv_windows(x, kh, kw, stride, pads):
    pt, pb, pl, pr = pads
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    if stride > 1:
        win = win[:, ::stride, ::stride]
    return xp, win


def conv2d_forward(x, w, stride, pads):
    """Cross-correlate x (C,H,W) with w (O,C,kH,kW). Returns (O,Ho,Wo)."""
    _, win = _conv_windows(x, w.shape[2], w.shape[3], stride, pads)
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def conv2d_backward_weight(gy, x, kh, kw, stride, pads):
    _, win = _conv_windows(x, kh, kw, stride, pads)
    return np.tensordot(gy, win, axes=([1, 2], [1, 2]))


def conv2d_backward_input(gy, w, x_shape, stride, pads):
    c, h, wd = x_shape
    pt, pb, pl, pr = pads
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = gy.shape[1], gy.shape[2]
    gxp = np.zeros((c, h + pt + pb, wd + pl + pr), dtype=gy.dtype)
    # Scatter one (kh, kw) tap at a time; each tap is a dense GEMM.
    for i in range(kh):
        for j in range(kw):
            t = np.tensordot(w[:, :, i, j], gy, axes=([0], [0]))
            gxp[:, i : i + (ho - 1) * stride + 1 : stride,
                j : j + (wo - 1) * stride + 1 : stride] += t
    return np.ascontiguousarray(gxp[:, pt : pt + h, pl : pl + wd])


def maxpool2d_forward(x, k, need_arg=True):
    """Non-overlapping k-by-k max pooling. Returns (y, argmax).

    argmax holds the flat row-major index of the winning element inside
    each window (first occurrence on ties), saved for the backward pass;
    it is None when need_arg is false (forward-only callers).
    """
    c, h, w = x.shape
    ho, wo = h // k, w // k
    win = x.reshape(c, ho, k, wo, k).transpose(0, 1, 3, 2, 4).reshape(c, ho, wo, k * k)
    y = np.ascontiguousarray(win.max(axis=-1))
    arg = np.argmax(win, axis=-1) if need_arg else None
    return y, arg


def maxpool2d_backward(gy, arg, k, x_shape):
    c, h, w = x_shape
    ho, wo = h // k, w // k
    gwin = np.zeros((c, ho, wo, k * k), dtype=gy.dtype)
    np.put_along_axis(gwin, arg[..., None], gy[..., None], axis=-1)
    gx = gwin.reshape(c, ho, wo, k, k).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
    return np.ascontiguousarray(gx)


def avgpool2d_forward(x, k):
    c, h, w = x.shape
    return x.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))


def avgpool2d_backward(gy, k, x_shape):
    c, h, w = x_shape
    g = gy * np.asarray(1.0 / (k * k), dtype=gy.dtype)
    gx = np.broadcast_to(g[:, :, None, :, None], (c, h // k, k, w // k, k))
    return np.ascontiguousarray(gx).reshape(c, h, w)


def _bilinear_parts(src, px, py):
    _, h, w = src.shape
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    wx = (px - x0).astype(src.dtype)
    wy = (py - y0).astype(src.dtype)
    x1, y1 = x0 + 1, y0 + 1
    ins = []
    vals = []
    for yy, xx in ((y0, x0), (y0, x1), (y1, x0), (y1, x1)):
        inside = ((xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)).astype(src.dtype)
        xc = np.clip(xx, 0, w - 1)
        yc = np.clip(yy, 0, h - 1)
        vals.append(src[:, yc, xc] * inside)
        ins.append(inside)
    return x0, y0, wx, wy, vals, ins


def bilinear_forward(src, px, py):
    """Sample src (C,H,W) at pixel coords px/py (h,w); zero outside."""
    _, _, wx, wy, (v00, v01, v10, v11), _ = _bilinear_parts(src, px, py)
    top = v00 * (1 - wx) + v01 * wx
    bot = v10 * (1 - wx) + v11 * wx
    return top * (1 - wy) + bot * wy


def bilinear_backward(gy, src, px, py, need_src, need_coords):
    """Gradients of bilinear_forward w.r.t. src and the pixel coordinates."""
    c, h, w = src.shape
    x0, y0, wx, wy, (v00, v01, v10, v11), ins = _bilinear_parts(src, px, py)
    x1, y1 = x0 + 1, y0 + 1
    gsrc = gpx = gpy = None
    if need_src:
        gsrc = np.zeros_like(src)
        weights = ((1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy)
        corners = ((y0, x0), (y0, x1), (y1, x0), (y1, x1))
        for (yy, xx), wt, inside in zip(corners, weights, ins):
            yc = np.clip(yy, 0, h - 1)
            xc = np.clip(xx, 0, w - 1)
            contrib = gy * (wt * inside)
            for ch in range(c):
                np.add.at(gsrc[ch], (yc, xc), contrib[ch])
    if need_coords:
        dx = (v01 - v00) * (1 - wy) + (v11 - v10) * wy
        dy = (v10 - v00) * (1 - wx) + (v11 - v01) * wx
        gpx = (gy * dx).sum(axis=0).astype(np.float64)
        gpy = (gy * dy).sum(axis=0).astype(np.float64)
    return gsrc, gpx, gpy
