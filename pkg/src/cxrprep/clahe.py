"""Contrast Limited Adaptive Histogram Equalization, from scratch.

Conventions (all fixed so outputs are reproducible byte-for-byte):

* the grid parameter is a grid of `grid_rows x grid_cols` tiles, not a
  tile size in pixels;
* the clip limit is a multiplier of the average per-tile bin count, so
  the absolute threshold is max(1, floor(clip_limit * tile_pixels / bins));
* clipped mass is redistributed in a single pass: floor-share to every
  bin, remainder one count each to the lowest-index bins (a bin can end
  at most share+1 above the threshold; mass is preserved exactly);
* non-divisible image dimensions are padded by edge replication on the
  right/bottom so every tile has the same size, then cropped back;
* tile centers form the interpolation lattice: interior pixels blend the
  4 nearest tile mappings bilinearly, edge bands 2 linearly, corner
  blocks use their single nearest mapping.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ImageTooSmallError
from .image import GrayImage, Histogram

_LUT_DTYPE = np.int32


@dataclass(frozen=True)
class ClaheParams:
    grid_rows: int = 8
    grid_cols: int = 8
    clip_limit: float = 2.0
    bins: int = 256

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid must be at least 1x1")
        if not self.clip_limit > 0:
            raise ValueError("clip_limit must be > 0")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")


@dataclass(frozen=True)
class TileMapping:
    """Monotone LUT from histogram bin index to output intensity."""
    lut: np.ndarray

    def __post_init__(self):
        lut = np.asarray(self.lut, dtype=_LUT_DTYPE)
        if lut.ndim != 1 or lut.size == 0:
            raise ValueError("lut must be a non-empty 1-D array")
        if lut[0] < 0 or np.any(np.diff(lut) < 0):
            raise ValueError("lut must be non-negative and non-decreasing")
        object.__setattr__(self, "lut", lut)
        self.lut.setflags(write=False)


def clip_threshold(clip_limit, total, bins):
    """Absolute per-bin ceiling for a tile of `total` pixels."""
    if math.isinf(clip_limit):
        return total  # nothing can exceed the full mass
    return max(1, int(clip_limit * total / bins))


def clip_and_redistribute(hist, clip_limit):
    """Clip bins at the absolute threshold and spread the excess uniformly.

    Total mass is preserved exactly.
    """
    counts = hist.counts
    total = hist.total
    if total <= 0:
        raise ValueError("histogram is empty")
    t = clip_threshold(clip_limit, total, counts.size)
    excess = int(np.maximum(counts - t, 0).sum())
    if excess == 0:
        return Histogram(counts.copy())
    out = np.minimum(counts, t)
    share, rem = divmod(excess, counts.size)
    out = out + share
    out[:rem] += 1
    return Histogram(out)


def build_tile_mapping(hist, bit_depth):
    """Equalization LUT: lut[v] = round(cdf(v) / total * (2^bit_depth - 1))."""
    total = hist.total
    if total <= 0:
        raise ValueError("histogram is empty")
    maxval = float((1 << bit_depth) - 1)
    cdf = np.cumsum(hist.counts, dtype=np.int64).astype(np.float64)
    lut = np.floor((cdf / float(total)) * maxval + 0.5).astype(_LUT_DTYPE)
    return TileMapping(lut)


def _tile_luts(padded, params, bit_depth, tile_h, tile_w):
    bins = params.bins
    bidx = (padded.astype(np.uint32) * np.uint32(bins)) >> np.uint32(bit_depth)
    luts = np.empty((params.grid_rows, params.grid_cols, bins), dtype=_LUT_DTYPE)
    for i in range(params.grid_rows):
        for j in range(params.grid_cols):
            tile = bidx[i * tile_h:(i + 1) * tile_h, j * tile_w:(j + 1) * tile_w]
            counts = np.bincount(tile.ravel(), minlength=bins)
            h = clip_and_redistribute(Histogram(counts), params.clip_limit)
            luts[i, j] = build_tile_mapping(h, bit_depth).lut
    return luts


def apply_clahe(img, params=ClaheParams()):
    """CLAHE over `img`; dimensions and bit depth are preserved."""
    h, w = img.height, img.width
    if w < params.grid_cols or h < params.grid_rows:
        raise ImageTooSmallError(
            f"image {w}x{h} smaller than grid {params.grid_cols}x{params.grid_rows}")
    if params.bins > (1 << img.bit_depth):
        raise ValueError("bins must be <= 2^bit_depth")
    tile_h = -(-h // params.grid_rows)
    tile_w = -(-w // params.grid_cols)
    pad_h = tile_h * params.grid_rows - h
    pad_w = tile_w * params.grid_cols - w
    padded = np.pad(img.pixels, ((0, pad_h), (0, pad_w)), mode="edge")
    luts = _tile_luts(padded, params, img.bit_depth, tile_h, tile_w)
    out = kernels.clahe_blend(padded, luts, params.grid_rows, params.grid_cols,
                              tile_h, tile_w, params.bins, img.bit_depth)
    if pad_h or pad_w:
        out = out[:h, :w].copy()
    return GrayImage(out, img.bit_depth)
