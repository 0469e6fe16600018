"""Pure numpy implementations of the hot kernels.

These are the fallback lane when the compiled extension is unavailable
(or when CXRPREP_PURE=1).  Every function here must produce output
bit-identical to its compiled twin in `_fastkern.pyx`; the float
expressions are written in the same evaluation order on purpose.
"""
import numpy as np

BACKEND_NAME = "pure"

# distances are stored squared in int64; radii this large are rejected
_DIST_INF = 1 << 20


def _axis_weights(n_out, n_in):
    # pixel centers at half-integer coordinates, edge clamped
    scale = n_in / n_out
    s = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    s = np.clip(s, 0.0, float(n_in - 1))
    i0 = np.floor(s).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = s - i0
    return i0, i1, w


def resize_bilinear(src, out_h, out_w):
    """Bilinear resize of a 2-D uint8/uint16 array, half-up rounding."""
    in_h, in_w = src.shape
    y0, y1, wy = _axis_weights(out_h, in_h)
    x0, x1, wx = _axis_weights(out_w, in_w)
    a = src[y0[:, None], x0[None, :]].astype(np.float64)
    b = src[y0[:, None], x1[None, :]].astype(np.float64)
    c = src[y1[:, None], x0[None, :]].astype(np.float64)
    d = src[y1[:, None], x1[None, :]].astype(np.float64)
    wxr = wx[None, :]
    wyr = wy[:, None]
    top = (1.0 - wxr) * a + wxr * b
    bot = (1.0 - wxr) * c + wxr * d
    val = (1.0 - wyr) * top + wyr * bot
    return np.floor(val + 0.5).astype(src.dtype)


def _tile_axis(n, tile, n_tiles):
    # fractional tile index per pixel coordinate; clamped pair + weight,
    # weight forced to 0 where both indices clamp to the same tile
    t = (np.arange(n, dtype=np.float64) - (tile - 1) * 0.5) / tile
    i0 = np.floor(t)
    w = t - i0
    i0 = i0.astype(np.int64)
    i0c = np.clip(i0, 0, n_tiles - 1)
    i1c = np.clip(i0 + 1, 0, n_tiles - 1)
    w = np.where(i0c == i1c, 0.0, w)
    return i0c, i1c, w


def clahe_blend(src, luts, grid_rows, grid_cols, tile_h, tile_w, bins, bit_depth):
    """Recombine per-tile LUTs over `src` by bilinear interpolation.

    `src` is the padded image (grid_rows*tile_h, grid_cols*tile_w);
    `luts` is (grid_rows, grid_cols, bins) int32.
    """
    bidx = (src.astype(np.uint32) * np.uint32(bins)) >> np.uint32(bit_depth)
    bidx = bidx.astype(np.int64)
    i0, i1, wy = _tile_axis(src.shape[0], tile_h, grid_rows)
    j0, j1, wx = _tile_axis(src.shape[1], tile_w, grid_cols)
    v00 = luts[i0[:, None], j0[None, :], bidx].astype(np.float64)
    v01 = luts[i0[:, None], j1[None, :], bidx].astype(np.float64)
    v10 = luts[i1[:, None], j0[None, :], bidx].astype(np.float64)
    v11 = luts[i1[:, None], j1[None, :], bidx].astype(np.float64)
    wxr = wx[None, :]
    wyr = wy[:, None]
    top = (1.0 - wxr) * v00 + wxr * v01
    bot = (1.0 - wxr) * v10 + wxr * v11
    val = (1.0 - wyr) * top + wyr * bot
    return np.floor(val + 0.5).astype(src.dtype)


def _row_distances(mask):
    # per pixel: vertical distance to the nearest set pixel in its column
    h, w = mask.shape
    d = np.full((h, w), _DIST_INF, dtype=np.int64)
    run = np.full(w, _DIST_INF, dtype=np.int64)
    for y in range(h):
        run = np.minimum(run + 1, _DIST_INF)
        run[mask[y]] = 0
        d[y] = run
    run = np.full(w, _DIST_INF, dtype=np.int64)
    for y in range(h - 1, -1, -1):
        run = np.minimum(run + 1, _DIST_INF)
        run[mask[y]] = 0
        np.minimum(d[y], run, out=d[y])
    return d


def disk_dilate(mask, radius):
    """Exact Euclidean disk dilation of a boolean mask.

    A pixel is set iff some input pixel lies within distance <= radius.
    Computed by thresholding the exact squared distance transform.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius >= _DIST_INF:
        raise ValueError("radius too large")
    if radius == 0:
        return mask.copy()
    if not mask.any():
        return np.zeros_like(mask)
    d = _row_distances(mask)
    dsq = d * d
    r2 = radius * radius
    out = np.zeros_like(mask)
    w = mask.shape[1]
    for dx in range(-radius, radius + 1):
        add = dx * dx
        if add > r2:
            continue
        lo = max(0, -dx)
        hi = min(w, w - dx)
        if lo >= hi:
            continue
        out[:, lo:hi] |= dsq[:, lo + dx:hi + dx] + add <= r2
    return out
