"""Numba-compiled kernel implementations (default backend).

Direct convolution loops keep the filter axis innermost so the generated
code vectorizes over contiguous weight/output rows; the forward pass also
blocks four output columns at a time to reuse loaded weights.
"""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def conv2d_forward(x, w, b):
    bsz, h, wd, c = x.shape
    kh, kw, _, f = w.shape
    oh, ow = h - kh + 1, wd - kw + 1
    y = np.empty((bsz, oh, ow, f))
    for n in range(bsz):
        for i in range(oh):
            j = 0
            while j + 4 <= ow:
                for ff in range(f):
                    y[n, i, j, ff] = b[ff]
                    y[n, i, j + 1, ff] = b[ff]
                    y[n, i, j + 2, ff] = b[ff]
                    y[n, i, j + 3, ff] = b[ff]
                for u in range(kh):
                    for v in range(kw):
                        for cc in range(c):
                            x0 = x[n, i + u, j + v, cc]
                            x1 = x[n, i + u, j + 1 + v, cc]
                            x2 = x[n, i + u, j + 2 + v, cc]
                            x3 = x[n, i + u, j + 3 + v, cc]
                            for ff in range(f):
                                wv = w[u, v, cc, ff]
                                y[n, i, j, ff] += x0 * wv
                                y[n, i, j + 1, ff] += x1 * wv
                                y[n, i, j + 2, ff] += x2 * wv
                                y[n, i, j + 3, ff] += x3 * wv
                j += 4
            while j < ow:
                for ff in range(f):
                    y[n, i, j, ff] = b[ff]
                for u in range(kh):
                    for v in range(kw):
                        for cc in range(c):
                            xv = x[n, i + u, j + v, cc]
                            for ff in range(f):
                                y[n, i, j, ff] += xv * w[u, v, cc, ff]
                j += 1
    return y


@njit(cache=True, fastmath=True)
def conv2d_backward_input(w, gy, h, wd):
    kh, kw, c, f = w.shape
    bsz, oh, ow, _ = gy.shape
    gx = np.zeros((bsz, h, wd, c))
    for n in range(bsz):
        for i in range(oh):
            j = 0
            while j + 4 <= ow:
                for u in range(kh):
                    for v in range(kw):
                        for cc in range(c):
                            a0 = a1 = a2 = a3 = 0.0
                            for ff in range(f):
                                wv = w[u, v, cc, ff]
                                a0 += wv * gy[n, i, j, ff]
                                a1 += wv * gy[n, i, j + 1, ff]
                                a2 += wv * gy[n, i, j + 2, ff]
                                a3 += wv * gy[n, i, j + 3, ff]
                            gx[n, i + u, j + v, cc] += a0
                            gx[n, i + u, j + 1 + v, cc] += a1
                            gx[n, i + u, j + 2 + v, cc] += a2
                            gx[n, i + u, j + 3 + v, cc] += a3
                j += 4
            while j < ow:
                for u in range(kh):
                    for v in range(kw):
                        for cc in range(c):
                            acc = 0.0
                            for ff in range(f):
                                acc += w[u, v, cc, ff] * gy[n, i, j, ff]
                            gx[n, i + u, j + v, cc] += acc
                j += 1
    return gx


@njit(cache=True, fastmath=True)
def conv2d_backward_params(x, gy, kh, kw):
    bsz, oh, ow, f = gy.shape
    c = x.shape[3]
    gw = np.zeros((kh, kw, c, f))
    gb = np.zeros(f)
    for n in range(bsz):
        for i in range(oh):
            j = 0
            while j + 4 <= ow:
                for ff in range(f):
                    gb[ff] += (gy[n, i, j, ff] + gy[n, i, j + 1, ff]
                               + gy[n, i, j + 2, ff] + gy[n, i, j + 3, ff])
                for u in range(kh):
                    for v in range(kw):
                        for cc in range(c):
                            x0 = x[n, i + u, j + v, cc]
                            x1 = x[n, i + u, j + 1 + v, cc]
                            x2 = x[n, i + u, j + 2 + v, cc]
                            x3 = x[n, i + u, j + 3 + v, cc]
                            for ff in range(f):
                                gw[u, v, cc, ff] += (x0 * gy[n, i, j, ff]
                                                     + x1 * gy[n, i, j + 1, ff]
                                                     + x2 * gy[n, i, j + 2, ff]
                                                     + x3 * gy[n, i, j + 3, ff])
                j += 4
            while j < ow:
                for ff in range(f):
                    gb[ff] += gy[n, i, j, ff]
                for u in range(kh):
                    for v in range(kw):
                        for cc in range(c):
                            xv = x[n, i + u, j + v, cc]
                            for ff in range(f):
                                gw[u, v, cc, ff] += xv * gy[n, i, j, ff]
                j += 1
    return gw, gb


@njit(cache=True)
def maxpool2_forward(x):
    bsz, h, wd, c = x.shape
    h2, w2 = h // 2, wd // 2
    y = np.empty((bsz, h2, w2, c))
    idx = np.empty((bsz, h2, w2, c), dtype=np.uint8)
    for n in range(bsz):
        for i in range(h2):
            for j in range(w2):
                for cc in range(c):
                    # row-major window scan; strict > keeps first tie
                    best = x[n, 2 * i, 2 * j, cc]
                    bi = 0
                    v = x[n, 2 * i, 2 * j + 1, cc]
                    if v > best:
                        best, bi = v, 1
                    v = x[n, 2 * i + 1, 2 * j, cc]
                    if v > best:
                        best, bi = v, 2
                    v = x[n, 2 * i + 1, 2 * j + 1, cc]
                    if v > best:
                        best, bi = v, 3
                    y[n, i, j, cc] = best
                    idx[n, i, j, cc] = bi
    return y, idx


@njit(cache=True)
def maxpool2_backward(idx, gy, h, wd):
    bsz, h2, w2, c = gy.shape
    # full write per window avoids a separate memset of the big buffer;
    # odd trailing rows/cols (dropped by the floor rule) are zeroed after
    gx = np.empty((bsz, h, wd, c))
    for n in range(bsz):
        for i in range(h2):
            for j in range(w2):
                for cc in range(c):
                    k = idx[n, i, j, cc]
                    g = gy[n, i, j, cc]
                    gx[n, 2 * i, 2 * j, cc] = g if k == 0 else 0.0
                    gx[n, 2 * i, 2 * j + 1, cc] = g if k == 1 else 0.0
                    gx[n, 2 * i + 1, 2 * j, cc] = g if k == 2 else 0.0
                    gx[n, 2 * i + 1, 2 * j + 1, cc] = g if k == 3 else 0.0
    if h != 2 * h2:
        gx[:, h - 1, :, :] = 0.0
    if wd != 2 * w2:
        gx[:, :, wd - 1, :] = 0.0
    return gx


@njit(cache=True, fastmath=True)
def correlate1d_rows(img, k):
    h, wd = img.shape
    m = k.size // 2
    out = np.zeros((h, wd))
    for i in range(h):
        for t in range(k.size):
            kt = k[t]
            off = t - m
            for j in range(wd):
                jj = j + off
                if jj < 0:
                    jj = 0
                elif jj >= wd:
                    jj = wd - 1
                out[i, j] += kt * img[i, jj]
    return out


@njit(cache=True, fastmath=True)
def correlate1d_cols(img, k):
    h, wd = img.shape
    m = k.size // 2
    out = np.zeros((h, wd))
    for i in range(h):
        for t in range(k.size):
            kt = k[t]
            ii = i + t - m
            if ii < 0:
                ii = 0
            elif ii >= h:
                ii = h - 1
            for j in range(wd):
                out[i, j] += kt * img[ii, j]
    return out


@njit(cache=True, fastmath=True)
def flow_update_matrices(a1xx, a1xy, a1yy, b1x, b1y,
                         a2xx, a2xy, a2yy, b2x, b2y, dx, dy):
    h, wd = dx.shape
    g11 = np.empty((h, wd))
    g12 = np.empty((h, wd))
    g22 = np.empty((h, wd))
    h1 = np.empty((h, wd))
    h2 = np.empty((h, wd))
    for i in range(h):
        for j in range(wd):
            fx = j + dx[i, j]
            fy = i + dy[i, j]
            if fx < 0.0:
                fx = 0.0
            elif fx > wd - 1.0:
                fx = wd - 1.0
            if fy < 0.0:
                fy = 0.0
            elif fy > h - 1.0:
                fy = h - 1.0
            x0 = int(fx)
            y0 = int(fy)
            if x0 > wd - 2:
                x0 = wd - 2
            if y0 > h - 2:
                y0 = h - 2
            tx = fx - x0
            ty = fy - y0
            w00 = (1.0 - tx) * (1.0 - ty)
            w01 = tx * (1.0 - ty)
            w10 = (1.0 - tx) * ty
            w11 = tx * ty
            waxx = (w00 * a2xx[y0, x0] + w01 * a2xx[y0, x0 + 1]
                    + w10 * a2xx[y0 + 1, x0] + w11 * a2xx[y0 + 1, x0 + 1])
            waxy = (w00 * a2xy[y0, x0] + w01 * a2xy[y0, x0 + 1]
                    + w10 * a2xy[y0 + 1, x0] + w11 * a2xy[y0 + 1, x0 + 1])
            wayy = (w00 * a2yy[y0, x0] + w01 * a2yy[y0, x0 + 1]
                    + w10 * a2yy[y0 + 1, x0] + w11 * a2yy[y0 + 1, x0 + 1])
            wbx = (w00 * b2x[y0, x0] + w01 * b2x[y0, x0 + 1]
                   + w10 * b2x[y0 + 1, x0] + w11 * b2x[y0 + 1, x0 + 1])
            wby = (w00 * b2y[y0, x0] + w01 * b2y[y0, x0 + 1]
                   + w10 * b2y[y0 + 1, x0] + w11 * b2y[y0 + 1, x0 + 1])
            axx = 0.5 * (a1xx[i, j] + waxx)
            axy = 0.5 * (a1xy[i, j] + waxy)
            ayy = 0.5 * (a1yy[i, j] + wayy)
            dbx = -0.5 * (wbx - b1x[i, j]) + axx * dx[i, j] + axy * dy[i, j]
            dby = -0.5 * (wby - b1y[i, j]) + axy * dx[i, j] + ayy * dy[i, j]
            g11[i, j] = axx * axx + axy * axy
            g12[i, j] = axy * (axx + ayy)
            g22[i, j] = ayy * ayy + axy * axy
            h1[i, j] = axx * dbx + axy * dby
            h2[i, j] = axy * dbx + ayy * dby
    return g11, g12, g22, h1, h2


@njit(cache=True, fastmath=True)
def solve_flow(g11, g12, g22, h1, h2):
    h, wd = g11.shape
    dx = np.zeros((h, wd))
    dy = np.zeros((h, wd))
    for i in range(h):
        for j in range(wd):
            r11 = g11[i, j] + 1e-9
            r22 = g22[i, j] + 1e-9
            r12 = g12[i, j]
            det = r11 * r22 - r12 * r12
            if det > 1e-15:
                inv = 1.0 / det
                dx[i, j] = (r22 * h1[i, j] - r12 * h2[i, j]) * inv
                dy[i, j] = (r11 * h2[i, j] - r12 * h1[i, j]) * inv
    return dx, dy
