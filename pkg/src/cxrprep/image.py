"""Grayscale image type, lossless I/O, downscaling, histogram extraction.

Images are single-channel 8- or 16-bit rasters (PGM P2/P5 or PNG).
Everything here is a pure function over immutable arrays; 16-bit data
stays 16-bit until an explicit 8-bit export is requested.
"""
import errno
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, PngImagePlugin, UnidentifiedImageError

from . import kernels
from .errors import CorruptDataError, UnsupportedFormatError

_DTYPES = {8: np.uint8, 16: np.uint16}


@dataclass(frozen=True)
class GrayImage:
    """2-D grayscale raster. `pixels` is row-major, dtype fixed by bit depth."""
    pixels: np.ndarray
    bit_depth: int

    def __post_init__(self):
        if self.bit_depth not in _DTYPES:
            raise ValueError(f"bit_depth must be 8 or 16, got {self.bit_depth}")
        px = self.pixels
        if px.ndim != 2:
            raise ValueError("pixels must be 2-D")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != _DTYPES[self.bit_depth]:
            raise ValueError(f"dtype {px.dtype} does not match bit depth {self.bit_depth}")
        if not px.flags.c_contiguous:
            object.__setattr__(self, "pixels", np.ascontiguousarray(px))
        self.pixels.setflags(write=False)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def max_value(self):
        return (1 << self.bit_depth) - 1


@dataclass(frozen=True)
class Histogram:
    """Intensity histogram: `counts` has one entry per bin."""
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("counts must be a 1-D array")
        if (c < 0).any():
            raise ValueError("counts must be >= 0")
        object.__setattr__(self, "counts", c)
        self.counts.setflags(write=False)

    @property
    def bins(self):
        return self.counts.size

    @property
    def total(self):
        return int(self.counts.sum())


def _read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptDataError(f"{path}: truncated header")
        return data[start:pos]

    magic = next_token()
    if magic not in (b"P2", b"P5"):
        raise UnsupportedFormatError(f"{path}: not a PGM file (magic {magic!r})")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except (ValueError, CorruptDataError) as exc:
        raise CorruptDataError(f"{path}: bad PGM header: {exc}") from None
    if width < 1 or height < 1:
        raise CorruptDataError(f"{path}: bad dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise CorruptDataError(f"{path}: bad maxval {maxval}")
    bit_depth = 8 if maxval <= 255 else 16
    n = width * height

    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        itemsize = 1 if maxval <= 255 else 2
        raw = data[pos:pos + n * itemsize]
        if len(raw) != n * itemsize:
            raise CorruptDataError(f"{path}: truncated pixel data")
        # P5 multi-byte samples are big-endian
        dt = np.uint8 if itemsize == 1 else np.dtype(">u2")
        arr = np.frombuffer(raw, dtype=dt).astype(_DTYPES[bit_depth])
    else:
        try:
            arr = np.array([int(t) for t in data[pos:].split()], dtype=np.int64)
        except ValueError as exc:
            raise CorruptDataError(f"{path}: bad ASCII sample: {exc}") from None
        if arr.size != n:
            raise CorruptDataError(f"{path}: expected {n} samples, got {arr.size}")
        if (arr < 0).any() or (arr > maxval).any():
            raise CorruptDataError(f"{path}: sample out of range")
        arr = arr.astype(_DTYPES[bit_depth])
    return GrayImage(arr.reshape(height, width), bit_depth)


def _read_png(path):
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                return GrayImage(np.asarray(im, dtype=np.uint8), 8)
            if mode in ("I;16", "I;16B"):
                return GrayImage(np.asarray(im, dtype=np.uint16), 16)
            if mode == "I":
                arr = np.asarray(im, dtype=np.int64)
                if arr.min() < 0 or arr.max() > 65535:
                    raise UnsupportedFormatError(
                        f"{path}: integer PNG exceeds 16-bit range")
                return GrayImage(arr.astype(np.uint16), 16)
            raise UnsupportedFormatError(
                f"{path}: mode {mode} is not single-channel grayscale")
    except UnidentifiedImageError as exc:
        raise CorruptDataError(f"{path}: {exc}") from None
    except (OSError, SyntaxError) as exc:
        raise CorruptDataError(f"{path}: {exc}") from None


def load_image(path):
    """Decode an 8-/16-bit single-channel PGM or PNG, pixel-exact."""
    if not os.path.exists(path):
        raise FileNotFoundError(errno.ENOENT, os.strerror(errno.ENOENT), path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:2] in (b"P2", b"P5"):
        return _read_pgm(path)
    if head == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    raise UnsupportedFormatError(f"{path}: unknown format")


def save_image(img, path, comment=None):
    """Write `img` losslessly; format chosen by extension (.pgm / .png).

    `comment` is embedded as a PGM comment line / PNG tEXt chunk; it never
    affects pixel data and keeps output bytes deterministic.
    """
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        _write_pgm(img, path, comment)
    elif ext == ".png":
        _write_png(img, path, comment)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported output extension")


def _write_pgm(img, path, comment):
    header = b"P5\n"
    if comment:
        header += b"# " + comment.encode("ascii") + b"\n"
    header += f"{img.width} {img.height}\n{img.max_value}\n".encode("ascii")
    px = img.pixels
    if img.bit_depth == 16:
        payload = px.astype(">u2").tobytes()
    else:
        payload = px.tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def _write_png(img, path, comment):
    pil = Image.fromarray(img.pixels)
    info = PngImagePlugin.PngInfo()
    if comment:
        info.add_text("Comment", comment)
    pil.save(path, format="PNG", pnginfo=info)


def export_8bit(img):
    """Linear min-max rescale to 8-bit; identity for 8-bit input."""
    if img.bit_depth == 8:
        return img
    px = img.pixels.astype(np.float64)
    lo, hi = float(px.min()), float(px.max())
    if hi == lo:
        out = np.zeros_like(img.pixels, dtype=np.uint8)
    else:
        out = np.floor((px - lo) * (255.0 / (hi - lo)) + 0.5).astype(np.uint8)
    return GrayImage(out, 8)


def downscale(img, target_w, target_h):
    """Bilinear resize with edge clamping; bit depth preserved.

    Sample grid: pixel centers at half-integer coordinates (align-corners
    disabled), half-up rounding of the blended value.
    """
    if target_w < 1 or target_h < 1:
        raise ValueError("target dimensions must be >= 1")
    out = kernels.resize_bilinear(img.pixels, target_h, target_w)
    return GrayImage(out, img.bit_depth)


def histogram(img, bins=256):
    """Histogram with bin index floor(v * bins / 2^bit_depth)."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if bins > (1 << img.bit_depth):
        raise ValueError("bins must be <= 2^bit_depth")
    idx = (img.pixels.astype(np.uint32).ravel() * np.uint32(bins)) >> np.uint32(img.bit_depth)
    counts = np.bincount(idx, minlength=bins)
    return Histogram(counts)
