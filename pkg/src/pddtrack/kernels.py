"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names at the bottom of the module dispatch to one flavour according
to :data:`pddtrack._accel.USE_NUMBA`. Both flavours are always importable so
tests and benchmarks can compare them directly.

Conventions
-----------
* 3x3 convolutions are cross-correlations with zero "same" padding:
  ``out[o, y, x] = sum_{c,a,b} w[o, c, a, b] * xpad[c, y + a, x + b]``.
* Boxes are ``(cx, cy, w, h)``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# 3x3 same-padded convolution
# ---------------------------------------------------------------------------


def _im2col_np(x):
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((c, 3, 3, h, w))
    for a in range(3):
        for b in range(3):
            cols[:, a, b] = xp[:, a:a + h, b:b + w]
    return cols.reshape(c * 9, h * w)


def conv3x3_np(x, w):
    o = w.shape[0]
    _, h, wd = x.shape
    return (w.reshape(o, -1) @ _im2col_np(x)).reshape(o, h, wd)


def conv3x3_backward_np(x, w, dout):
    """Return ``(dx, dw)`` for :func:`conv3x3_np` given the output gradient."""
    o, c = w.shape[:2]
    _, h, wd = x.shape
    cols = _im2col_np(x)
    g = dout.reshape(o, h * wd)
    dw = (g @ cols.T).reshape(w.shape)
    dcols = (w.reshape(o, -1).T @ g).reshape(c, 3, 3, h, wd)
    dxp = np.zeros((c, h + 2, wd + 2))
    for a in range(3):
        for b in range(3):
            dxp[:, a:a + h, b:b + wd] += dcols[:, a, b]
    return dxp[:, 1:-1, 1:-1].copy(), dw


@njit(cache=True)
def _im2col_nb(x):
    c, h, w = x.shape
    cols = np.zeros((c * 9, h * w))
    for ch in range(c):
        for a in range(3):
            for b in range(3):
                row = (ch * 3 + a) * 3 + b
                for y in range(h):
                    yy = y + a - 1
                    if yy < 0 or yy >= h:
                        continue
                    for xx in range(w):
                        xs = xx + b - 1
                        if xs >= 0 and xs < w:
                            cols[row, y * w + xx] = x[ch, yy, xs]
    return cols


@njit(cache=True)
def conv3x3_nb(x, w):
    o = w.shape[0]
    _, h, wd = x.shape
    out = np.dot(np.ascontiguousarray(w.reshape(o, -1)), _im2col_nb(x))
    return out.reshape(o, h, wd)


@njit(cache=True)
def conv3x3_backward_nb(x, w, dout):
    o, c = w.shape[0], w.shape[1]
    _, h, wd = x.shape
    cols = _im2col_nb(x)
    g = np.ascontiguousarray(dout.reshape(o, h * wd))
    dw = np.dot(g, cols.T).reshape(w.shape)
    dcols = np.dot(np.ascontiguousarray(w.reshape(o, -1).T), g)
    dx = np.zeros((c, h, wd))
    for ch in range(c):
        for a in range(3):
            for b in range(3):
                row = (ch * 3 + a) * 3 + b
                for y in range(h):
                    yy = y + a - 1
                    if yy < 0 or yy >= h:
                        continue
                    for xx in range(wd):
                        xs = xx + b - 1
                        if xs >= 0 and xs < wd:
                            dx[ch, yy, xs] += dcols[row, y * wd + xx]
    return dx, dw


# ---------------------------------------------------------------------------
# Gaussian mixture rendering on a regular grid
# ---------------------------------------------------------------------------


def gaussian_grid_np(means, inv_covs, coefs, xs, ys):
    """Sum of ``coef * exp(-0.5 d^T P d)`` over components at every grid node.

    ``means`` is (K, 2) in (x, y), ``inv_covs`` is (K, 2, 2) and ``coefs`` (K,)
    already include the Gaussian normalisation.
    """
    out = np.zeros((ys.size, xs.size))
    for k in range(means.shape[0]):
        dx = xs[None, :] - means[k, 0]
        dy = ys[:, None] - means[k, 1]
        p = inv_covs[k]
        q = p[0, 0] * dx * dx + (p[0, 1] + p[1, 0]) * dx * dy + p[1, 1] * dy * dy
        out += coefs[k] * np.exp(-0.5 * q)
    return out


@njit(cache=True)
def gaussian_grid_nb(means, inv_covs, coefs, xs, ys):
    out = np.zeros((ys.size, xs.size))
    for k in range(means.shape[0]):
        mx = means[k, 0]
        my = means[k, 1]
        p00 = inv_covs[k, 0, 0]
        p01 = inv_covs[k, 0, 1] + inv_covs[k, 1, 0]
        p11 = inv_covs[k, 1, 1]
        ck = coefs[k]
        for i in range(ys.size):
            dy = ys[i] - my
            for j in range(xs.size):
                dx = xs[j] - mx
                q = p00 * dx * dx + p01 * dx * dy + p11 * dy * dy
                out[i, j] += ck * np.exp(-0.5 * q)
    return out


# ---------------------------------------------------------------------------
# Strict 8-neighbour local maxima
# ---------------------------------------------------------------------------


def local_maxima_np(v):
    """Boolean mask of 8-neighbourhood maxima.

    A cell must be strictly greater than neighbours that precede it in
    row-major order and no smaller than those that follow, so a plateau of
    tied maxima yields exactly its first cell. At least one neighbour must be
    strictly smaller; flat regions (the median border frame) yield nothing.
    """
    rows, cols = v.shape
    padded = np.full((rows + 2, cols + 2), -np.inf)
    padded[1:-1, 1:-1] = v
    mask = np.ones(v.shape, dtype=np.bool_)
    some_lower = np.zeros(v.shape, dtype=np.bool_)
    for a in range(3):
        for b in range(3):
            if a == 1 and b == 1:
                continue
            nb = padded[a:a + rows, b:b + cols]
            if (a, b) < (1, 1):
                mask &= v > nb
            else:
                mask &= v >= nb
            # off-grid cells never count as lower
            some_lower |= (v > nb) & np.isfinite(nb)
    return mask & some_lower


@njit(cache=True)
def local_maxima_nb(v):
    rows, cols = v.shape
    mask = np.zeros((rows, cols), dtype=np.bool_)
    for i in range(rows):
        for j in range(cols):
            c = v[i, j]
            ok = True
            lower = False
            for a in range(-1, 2):
                ii = i + a
                for b in range(-1, 2):
                    jj = j + b
                    if a == 0 and b == 0:
                        continue
                    if ii < 0 or ii >= rows or jj < 0 or jj >= cols:
                        continue
                    n = v[ii, jj]
                    if a < 0 or (a == 0 and b < 0):
                        if not c > n:
                            ok = False
                    elif not c >= n:
                        ok = False
                    if c > n:
                        lower = True
            mask[i, j] = ok and lower
    return mask


# ---------------------------------------------------------------------------
# Pairwise IoU of (cx, cy, w, h) boxes
# ---------------------------------------------------------------------------


def iou_matrix_np(a, b):
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    ax0, ax1 = a[:, 0] - a[:, 2] / 2, a[:, 0] + a[:, 2] / 2
    ay0, ay1 = a[:, 1] - a[:, 3] / 2, a[:, 1] + a[:, 3] / 2
    bx0, bx1 = b[:, 0] - b[:, 2] / 2, b[:, 0] + b[:, 2] / 2
    by0, by1 = b[:, 1] - b[:, 3] / 2, b[:, 1] + b[:, 3] / 2
    iw = np.minimum(ax1[:, None], bx1[None, :]) - np.maximum(ax0[:, None], bx0[None, :])
    ih = np.minimum(ay1[:, None], by1[None, :]) - np.maximum(ay0[:, None], by0[None, :])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    # areas from the same corners as the overlap, so identical boxes give exactly 1
    union = ((ax1 - ax0) * (ay1 - ay0))[:, None] + ((bx1 - bx0) * (by1 - by0))[None, :] - inter
    return np.where(union > 0, np.minimum(inter / np.where(union > 0, union, 1.0), 1.0), 0.0)


@njit(cache=True)
def iou_matrix_nb(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        ax0 = a[i, 0] - a[i, 2] / 2
        ax1 = a[i, 0] + a[i, 2] / 2
        ay0 = a[i, 1] - a[i, 3] / 2
        ay1 = a[i, 1] + a[i, 3] / 2
        area_a = (ax1 - ax0) * (ay1 - ay0)
        for j in range(m):
            bx0 = b[j, 0] - b[j, 2] / 2
            bx1 = b[j, 0] + b[j, 2] / 2
            by0 = b[j, 1] - b[j, 3] / 2
            by1 = b[j, 1] + b[j, 3] / 2
            iw = min(ax1, bx1) - max(ax0, bx0)
            ih = min(ay1, by1) - max(ay0, by0)
            if iw <= 0 or ih <= 0:
                continue
            inter = iw * ih
            union = area_a + (bx1 - bx0) * (by1 - by0) - inter
            if union > 0:
                out[i, j] = min(inter / union, 1.0)
    return out


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


if USE_NUMBA:

    def conv3x3(x, w):
        return conv3x3_nb(_f64(x), _f64(w))

    def conv3x3_backward(x, w, dout):
        return conv3x3_backward_nb(_f64(x), _f64(w), _f64(dout))

    def gaussian_grid(means, inv_covs, coefs, xs, ys):
        return gaussian_grid_nb(_f64(means).reshape(-1, 2), _f64(inv_covs).reshape(-1, 2, 2),
                                _f64(coefs).ravel(), _f64(xs), _f64(ys))

    def local_maxima(v):
        return local_maxima_nb(_f64(v))

    def iou_matrix(a, b):
        return iou_matrix_nb(_f64(a).reshape(-1, 4), _f64(b).reshape(-1, 4))

else:
    conv3x3 = conv3x3_np
    conv3x3_backward = conv3x3_backward_np
    gaussian_grid = gaussian_grid_np
    local_maxima = local_maxima_np
    iou_matrix = iou_matrix_np
