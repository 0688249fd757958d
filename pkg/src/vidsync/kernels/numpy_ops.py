"""Pure-NumPy kernel implementations (fallback backend).

Convolutions are evaluated as one matmul per kernel tap, which keeps the
work inside BLAS; inputs with very few channels go through an explicit
im2col instead because tap matmuls degenerate to rank-1 updates there.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Below this channel count the tap-matmul path is slower than im2col.
_IM2COL_MAX_CHANNELS = 8


def conv2d_forward(x, w, b):
    """Valid correlation, stride 1. x (B,H,W,C), w (kh,kw,C,F), b (F)."""
    kh, kw, c, f = w.shape
    bsz, h, wd, _ = x.shape
    oh, ow = h - kh + 1, wd - kw + 1
    if c < _IM2COL_MAX_CHANNELS:
        cols = sliding_window_view(x, (kh, kw), axis=(1, 2))
        cols = np.ascontiguousarray(cols.transpose(0, 1, 2, 4, 5, 3))
        y = cols.reshape(bsz * oh * ow, kh * kw * c) @ w.reshape(kh * kw * c, f)
        return y.reshape(bsz, oh, ow, f) + b
    y = np.zeros((bsz, oh, ow, f))
    for u in range(kh):
        for v in range(kw):
            y += x[:, u:u + oh, v:v + ow, :] @ w[u, v]
    return y + b


def conv2d_backward_input(w, gy, h, wd):
    kh, kw, c, f = w.shape
    bsz, oh, ow, _ = gy.shape
    gx = np.zeros((bsz, h, wd, c))
    for u in range(kh):
        for v in range(kw):
            gx[:, u:u + oh, v:v + ow, :] += gy @ w[u, v].T
    return gx


def conv2d_backward_params(x, gy, kh, kw):
    bsz, oh, ow, f = gy.shape
    c = x.shape[3]
    gyf = gy.reshape(bsz * oh * ow, f)
    gw = np.empty((kh, kw, c, f))
    for u in range(kh):
        for v in range(kw):
            xs = np.ascontiguousarray(x[:, u:u + oh, v:v + ow, :]).reshape(-1, c)
            gw[u, v] = xs.T @ gyf
    gb = gy.sum(axis=(0, 1, 2))
    return gw, gb


def maxpool2_forward(x):
    """2x2 window, stride 2, floor on odd dims. Returns (values, argmax 0..3).

    Window cells are scanned row-major ((0,0),(0,1),(1,0),(1,1)); ties keep
    the first occurrence so that gradient routing is deterministic.
    """
    bsz, h, wd, c = x.shape
    h2, w2 = h // 2, wd // 2
    xv = x[:, :2 * h2, :2 * w2, :]
    stacked = np.stack(
        [
            xv[:, 0::2, 0::2, :],
            xv[:, 0::2, 1::2, :],
            xv[:, 1::2, 0::2, :],
            xv[:, 1::2, 1::2, :],
        ],
        axis=0,
    )
    idx = np.argmax(stacked, axis=0).astype(np.uint8)
    y = np.take_along_axis(stacked, idx[None].astype(np.intp), axis=0)[0]
    return y, idx


def maxpool2_backward(idx, gy, h, wd):
    bsz, h2, w2, c = gy.shape
    gx = np.zeros((bsz, h, wd, c))
    for k, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        view = gx[:, di:di + 2 * h2:2, dj:dj + 2 * w2:2, :]
        mask = idx == k
        view[mask] = gy[mask]
    return gx


def _correlate1d(img, k, axis):
    m = k.size // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (m, m)
    p = np.pad(img, pad, mode="edge")
    out = np.zeros_like(img)
    n = img.shape[axis]
    for t in range(k.size):
        if axis == 0:
            out += k[t] * p[t:t + n, :]
        else:
            out += k[t] * p[:, t:t + n]
    return out


def correlate1d_rows(img, k):
    """Correlate along axis 1 (x direction) with replicate borders."""
    return _correlate1d(img, k, 1)


def correlate1d_cols(img, k):
    """Correlate along axis 0 (y direction) with replicate borders."""
    return _correlate1d(img, k, 0)


def flow_update_matrices(a1xx, a1xy, a1yy, b1x, b1y,
                         a2xx, a2xy, a2yy, b2x, b2y, dx, dy):
    """Per-pixel normal-equation terms for one displacement refinement.

    Warps frame-2 polynomial coefficients to x+d (bilinear, clipped),
    averages the quadratic parts, and returns the 2x2 Gram planes
    (g11,g12,g22) and right-hand side (h1,h2).
    """
    h, wd = dx.shape
    cols = np.arange(wd, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)[:, None]
    fx = np.clip(cols + dx, 0.0, wd - 1.0)
    fy = np.clip(rows + dy, 0.0, h - 1.0)
    x0 = np.minimum(fx.astype(np.intp), wd - 2)
    y0 = np.minimum(fy.astype(np.intp), h - 2)
    tx = fx - x0
    ty = fy - y0
    w00 = (1.0 - tx) * (1.0 - ty)
    w01 = tx * (1.0 - ty)
    w10 = (1.0 - tx) * ty
    w11 = tx * ty

    def warp(p):
        return (w00 * p[y0, x0] + w01 * p[y0, x0 + 1]
                + w10 * p[y0 + 1, x0] + w11 * p[y0 + 1, x0 + 1])

    axx = 0.5 * (a1xx + warp(a2xx))
    axy = 0.5 * (a1xy + warp(a2xy))
    ayy = 0.5 * (a1yy + warp(a2yy))
    dbx = -0.5 * (warp(b2x) - b1x) + axx * dx + axy * dy
    dby = -0.5 * (warp(b2y) - b1y) + axy * dx + ayy * dy
    g11 = axx * axx + axy * axy
    g12 = axy * (axx + ayy)
    g22 = ayy * ayy + axy * axy
    h1 = axx * dbx + axy * dby
    h2 = axy * dbx + ayy * dby
    return g11, g12, g22, h1, h2


def solve_flow(g11, g12, g22, h1, h2):
    """Solve the smoothed 2x2 systems; near-singular pixels get zero flow."""
    r11 = g11 + 1e-9
    r22 = g22 + 1e-9
    det = r11 * r22 - g12 * g12
    ok = det > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    dx = (r22 * h1 - g12 * h2) * inv
    dy = (r11 * h2 - g12 * h1) * inv
    return dx, dy
