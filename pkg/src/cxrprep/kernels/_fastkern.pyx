# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in pure.py.

Float expressions are evaluated in the same order as the numpy fallback
(and the extension is built with -ffp-contract=off), so both lanes
produce bit-identical output.
"""
import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport floor

ctypedef fused pix_t:
    cnp.uint8_t
    cnp.uint16_t

BACKEND_NAME = "compiled"

cdef long long _DIST_INF = 1 << 20


def resize_bilinear(const pix_t[:, ::1] src, int out_h, int out_w):
    cdef int in_h = src.shape[0]
    cdef int in_w = src.shape[1]
    cdef double scale_y = in_h / <double>out_h
    cdef double scale_x = in_w / <double>out_w
    cdef cnp.int64_t[::1] y0 = np.empty(out_h, dtype=np.int64)
    cdef cnp.int64_t[::1] y1 = np.empty(out_h, dtype=np.int64)
    cdef double[::1] wy = np.empty(out_h, dtype=np.float64)
    cdef cnp.int64_t[::1] x0 = np.empty(out_w, dtype=np.int64)
    cdef cnp.int64_t[::1] x1 = np.empty(out_w, dtype=np.int64)
    cdef double[::1] wx = np.empty(out_w, dtype=np.float64)
    cdef Py_ssize_t i, y, x
    cdef double s, a, b, c, d, top, bot, val, w0

    for i in range(out_h):
        s = (i + 0.5) * scale_y - 0.5
        if s < 0.0:
            s = 0.0
        elif s > in_h - 1:
            s = in_h - 1
        y0[i] = <cnp.int64_t>floor(s)
        y1[i] = y0[i] + 1 if y0[i] + 1 < in_h - 1 else in_h - 1
        wy[i] = s - y0[i]
    for i in range(out_w):
        s = (i + 0.5) * scale_x - 0.5
        if s < 0.0:
            s = 0.0
        elif s > in_w - 1:
            s = in_w - 1
        x0[i] = <cnp.int64_t>floor(s)
        x1[i] = x0[i] + 1 if x0[i] + 1 < in_w - 1 else in_w - 1
        wx[i] = s - x0[i]

    if pix_t is cnp.uint8_t:
        out_arr = np.empty((out_h, out_w), dtype=np.uint8)
    else:
        out_arr = np.empty((out_h, out_w), dtype=np.uint16)
    cdef pix_t[:, ::1] out = out_arr

    for y in range(out_h):
        for x in range(out_w):
            a = <double>src[y0[y], x0[x]]
            b = <double>src[y0[y], x1[x]]
            c = <double>src[y1[y], x0[x]]
            d = <double>src[y1[y], x1[x]]
            w0 = wx[x]
            top = (1.0 - w0) * a + w0 * b
            bot = (1.0 - w0) * c + w0 * d
            val = (1.0 - wy[y]) * top + wy[y] * bot
            out[y, x] = <pix_t>floor(val + 0.5)
    return out_arr


def clahe_blend(const pix_t[:, ::1] src, const cnp.int32_t[:, :, ::1] luts,
                int grid_rows, int grid_cols, int tile_h, int tile_w,
                int bins, int bit_depth):
    cdef int h = src.shape[0]
    cdef int w = src.shape[1]
    cdef cnp.int64_t[::1] i0 = np.empty(h, dtype=np.int64)
    cdef cnp.int64_t[::1] i1 = np.empty(h, dtype=np.int64)
    cdef double[::1] wy = np.empty(h, dtype=np.float64)
    cdef cnp.int64_t[::1] j0 = np.empty(w, dtype=np.int64)
    cdef cnp.int64_t[::1] j1 = np.empty(w, dtype=np.int64)
    cdef double[::1] wx = np.empty(w, dtype=np.float64)
    cdef Py_ssize_t y, x
    cdef long long a, bidx
    cdef double t, fi, dw, v00, v01, v10, v11, top, bot, val, wxx

    for y in range(h):
        t = (y - (tile_h - 1) * 0.5) / tile_h
        fi = floor(t)
        dw = t - fi
        a = <long long>fi
        i0[y] = 0 if a < 0 else (grid_rows - 1 if a > grid_rows - 1 else a)
        a = a + 1
        i1[y] = 0 if a < 0 else (grid_rows - 1 if a > grid_rows - 1 else a)
        wy[y] = 0.0 if i0[y] == i1[y] else dw
    for x in range(w):
        t = (x - (tile_w - 1) * 0.5) / tile_w
        fi = floor(t)
        dw = t - fi
        a = <long long>fi
        j0[x] = 0 if a < 0 else (grid_cols - 1 if a > grid_cols - 1 else a)
        a = a + 1
        j1[x] = 0 if a < 0 else (grid_cols - 1 if a > grid_cols - 1 else a)
        wx[x] = 0.0 if j0[x] == j1[x] else dw

    if pix_t is cnp.uint8_t:
        out_arr = np.empty((h, w), dtype=np.uint8)
    else:
        out_arr = np.empty((h, w), dtype=np.uint16)
    cdef pix_t[:, ::1] out = out_arr

    for y in range(h):
        for x in range(w):
            bidx = (<long long>src[y, x] * bins) >> bit_depth
            v00 = <double>luts[i0[y], j0[x], bidx]
            v01 = <double>luts[i0[y], j1[x], bidx]
            v10 = <double>luts[i1[y], j0[x], bidx]
            v11 = <double>luts[i1[y], j1[x], bidx]
            wxx = wx[x]
            top = (1.0 - wxx) * v00 + wxx * v01
            bot = (1.0 - wxx) * v10 + wxx * v11
            val = (1.0 - wy[y]) * top + wy[y] * bot
            out[y, x] = <pix_t>floor(val + 0.5)
    return out_arr


@cython.cdivision(True)
cdef inline double _intersect(cnp.int64_t[::1] f, Py_ssize_t q, Py_ssize_t p):
    return ((f[q] + <double>(q * q)) - (f[p] + <double>(p * p))) / (2.0 * q - 2.0 * p)


def disk_dilate(mask, long long radius):
    """Exact Euclidean disk dilation via the two-pass squared EDT
    (column scans + per-row lower envelope of parabolas)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius >= _DIST_INF:
        raise ValueError("radius too large")
    if radius == 0:
        return mask.copy()
    mask_arr = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] m = mask_arr
    cdef Py_ssize_t h = m.shape[0]
    cdef Py_ssize_t w = m.shape[1]
    cdef cnp.int64_t[:, ::1] d = np.empty((h, w), dtype=np.int64)
    cdef cnp.int64_t[::1] run = np.full(w, _DIST_INF, dtype=np.int64)
    cdef Py_ssize_t y, x, q, k
    cdef long long rv, r2 = radius * radius

    for y in range(h):
        for x in range(w):
            rv = run[x] + 1
            if rv > _DIST_INF:
                rv = _DIST_INF
            if m[y, x]:
                rv = 0
            run[x] = rv
            d[y, x] = rv
    for x in range(w):
        run[x] = _DIST_INF
    for y in range(h - 1, -1, -1):
        for x in range(w):
            rv = run[x] + 1
            if rv > _DIST_INF:
                rv = _DIST_INF
            if m[y, x]:
                rv = 0
            run[x] = rv
            if rv < d[y, x]:
                d[y, x] = rv

    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef cnp.int64_t[::1] f = np.empty(w, dtype=np.int64)
    cdef cnp.int64_t[::1] v = np.empty(w, dtype=np.int64)
    cdef double[::1] z = np.empty(w + 1, dtype=np.float64)
    cdef double s
    cdef long long dist
    cdef double INF = float("inf")

    for y in range(h):
        for x in range(w):
            f[x] = d[y, x] * d[y, x]
        k = 0
        v[0] = 0
        z[0] = -INF
        z[1] = INF
        for q in range(1, w):
            s = _intersect(f, q, <Py_ssize_t>v[k])
            while s <= z[k]:
                k -= 1
                s = _intersect(f, q, <Py_ssize_t>v[k])
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = INF
        k = 0
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            dist = (q - v[k]) * (q - v[k]) + f[v[k]]
            if dist <= r2:
                out[y, q] = 1
    return out_arr.view(np.bool_)
