"""Binary-mask morphology, mask application, and bounding-box cropping.

The structuring element for dilation is a Euclidean disk: `margin`
pixels of isotropic slack around the segmentation, defined at the mask's
native resolution (1024 for the stock segmentation files) and scaled
linearly when a mask arrives at another resolution.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatchError, EmptyMaskError, OutOfBoundsError
from .image import GrayImage

DEFAULT_NATIVE_RESOLUTION = 1024


@dataclass(frozen=True)
class BinaryMask:
    """Lung segmentation raster; nonzero means lung."""
    bits: np.ndarray
    native_resolution: int = DEFAULT_NATIVE_RESOLUTION

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError("mask must be 2-D")
        if b.dtype != np.bool_:
            b = b != 0
        object.__setattr__(self, "bits", np.ascontiguousarray(b))
        self.bits.setflags(write=False)

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]


@dataclass(frozen=True)
class BBox:
    """Inclusive pixel box."""
    row_min: int
    row_max: int
    col_min: int
    col_max: int

    def __post_init__(self):
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise ValueError("degenerate box")
        if self.row_min < 0 or self.col_min < 0:
            raise ValueError("negative box coordinate")

    @property
    def height(self):
        return self.row_max - self.row_min + 1

    @property
    def width(self):
        return self.col_max - self.col_min + 1


def scaled_margin(margin, width, native_resolution=DEFAULT_NATIVE_RESOLUTION):
    """Dilation radius at `width`, anchored to the native resolution."""
    return int(round(margin * width / native_resolution))


def dilate(mask, radius):
    """Euclidean-disk dilation: output set iff an input pixel lies within
    distance <= radius."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    out = kernels.disk_dilate(mask.bits, int(radius))
    return BinaryMask(out, mask.native_resolution)


def resample_mask(mask, target_w, target_h):
    """Nearest-neighbor resample: output bit (y, x) copies the source bit at
    (floor((y+0.5)*h/target_h), floor((x+0.5)*w/target_w))."""
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    h, w = mask.bits.shape
    if (target_h, target_w) == (h, w):
        return BinaryMask(mask.bits.copy(), mask.native_resolution)
    rows = ((2 * np.arange(target_h, dtype=np.int64) + 1) * h) // (2 * target_h)
    cols = ((2 * np.arange(target_w, dtype=np.int64) + 1) * w) // (2 * target_w)
    out = mask.bits[rows[:, None], cols[None, :]]
    return BinaryMask(out, mask.native_resolution)


def apply_mask(img, mask, background=0):
    """Keep image pixels where the mask is set, `background` elsewhere."""
    if (img.height, img.width) != (mask.height, mask.width):
        raise DimensionMismatchError(
            f"image {img.width}x{img.height} vs mask {mask.width}x{mask.height}")
    if not 0 <= background <= img.max_value:
        raise ValueError("background out of range for bit depth")
    out = np.where(mask.bits, img.pixels, img.pixels.dtype.type(background))
    return GrayImage(out, img.bit_depth)


def bounding_box(mask):
    """Minimal axis-aligned box containing every set pixel."""
    rows = np.flatnonzero(mask.bits.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("mask has no set pixel")
    cols = np.flatnonzero(mask.bits.any(axis=0))
    return BBox(int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1]))


def scale_bbox(box, from_h, from_w, to_h, to_w):
    """Map an inclusive box between resolutions (pixel-area convention,
    exact integer arithmetic)."""
    row_min = (box.row_min * to_h) // from_h
    row_max = ((box.row_max + 1) * to_h - 1) // from_h
    col_min = (box.col_min * to_w) // from_w
    col_max = ((box.col_max + 1) * to_w - 1) // from_w
    return BBox(row_min, min(row_max, to_h - 1), col_min, min(col_max, to_w - 1))


def crop(img, box):
    """Copy the pixels inside an inclusive box."""
    if box.row_max >= img.height or box.col_max >= img.width:
        raise OutOfBoundsError(
            f"box {box} exceeds image {img.width}x{img.height}")
    out = img.pixels[box.row_min:box.row_max + 1, box.col_min:box.col_max + 1]
    return GrayImage(out.copy(), img.bit_depth)


def letterbox_to_square(img, background=0):
    """Pad the shorter axis symmetrically with `background` to a square."""
    h, w = img.height, img.width
    if h == w:
        return img
    side = max(h, w)
    pad_top = (side - h) // 2
    pad_left = (side - w) // 2
    out = np.full((side, side), img.pixels.dtype.type(background),
                  dtype=img.pixels.dtype)
    out[pad_top:pad_top + h, pad_left:pad_left + w] = img.pixels
    return GrayImage(out, img.bit_depth)
