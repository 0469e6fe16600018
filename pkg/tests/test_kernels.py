"""Compiled and pure kernel lanes must be bit-identical on every input."""
import subprocess
import sys

import numpy as np
import pytest

from cxrprep import kernels
from cxrprep.kernels import pure

fast = pytest.importorskip(
    "cxrprep.kernels._fastkern",
    reason="compiled kernel lane not built in this environment")

DTYPES = [np.uint8, np.uint16]


def random_pixels(rng, h, w, dtype):
    hi = 256 if dtype == np.uint8 else 65536
    return rng.integers(0, hi, size=(h, w), dtype=dtype)


def random_luts(rng, grid_rows, grid_cols, bins, bit_depth):
    maxv = (1 << bit_depth) - 1
    steps = rng.integers(0, 4, size=(grid_rows, grid_cols, bins))
    luts = np.minimum(np.cumsum(steps, axis=2), maxv)
    return np.ascontiguousarray(luts, dtype=np.int32)


class TestBackendSelection:
    def test_active_backend_named(self):
        assert kernels.BACKEND in ("compiled", "pure")

    def test_lane_names_differ(self):
        assert fast.BACKEND_NAME == "compiled"
        assert pure.BACKEND_NAME == "pure"

    def test_env_var_forces_pure_lane(self):
        code = "from cxrprep import kernels; print(kernels.BACKEND)"
        out = subprocess.run(
            [sys.executable, "-c", code],
            env={"CXRPREP_PURE": "1", "PATH": "/usr/bin:/bin"},
            capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "pure"


class TestResizeParity:
    @pytest.mark.parametrize("dtype", DTYPES)
    def test_random_sizes(self, rng, dtype):
        for _ in range(30):
            in_h, in_w = rng.integers(1, 60, size=2)
            out_h, out_w = rng.integers(1, 60, size=2)
            src = random_pixels(rng, int(in_h), int(in_w), dtype)
            a = fast.resize_bilinear(src, int(out_h), int(out_w))
            b = pure.resize_bilinear(src, int(out_h), int(out_w))
            assert np.asarray(a).dtype == dtype
            assert np.array_equal(a, b)

    def test_read_only_input_accepted(self, rng):
        src = random_pixels(rng, 16, 16, np.uint8)
        src.setflags(write=False)
        a = fast.resize_bilinear(src, 7, 9)
        b = pure.resize_bilinear(src, 7, 9)
        assert np.array_equal(a, b)

    def test_two_to_one_averages(self):
        src = np.array([[0, 255]], dtype=np.uint8)
        assert np.asarray(fast.resize_bilinear(src, 1, 1))[0, 0] == 128
        assert pure.resize_bilinear(src, 1, 1)[0, 0] == 128


class TestClaheBlendParity:
    @pytest.mark.parametrize("dtype,depth", [(np.uint8, 8), (np.uint16, 16)])
    def test_random_grids(self, rng, dtype, depth):
        for _ in range(15):
            grid_rows = int(rng.integers(1, 6))
            grid_cols = int(rng.integers(1, 6))
            tile_h = int(rng.integers(2, 12))
            tile_w = int(rng.integers(2, 12))
            bins = int(rng.choice([4, 16, 256]))
            src = random_pixels(
                rng, grid_rows * tile_h, grid_cols * tile_w, dtype)
            luts = random_luts(rng, grid_rows, grid_cols, bins, depth)
            a = fast.clahe_blend(src, luts, grid_rows, grid_cols,
                                 tile_h, tile_w, bins, depth)
            b = pure.clahe_blend(src, luts, grid_rows, grid_cols,
                                 tile_h, tile_w, bins, depth)
            assert np.asarray(a).dtype == dtype
            assert np.array_equal(a, b)

    def test_read_only_inputs_accepted(self, rng):
        src = random_pixels(rng, 8, 8, np.uint16)
        luts = random_luts(rng, 2, 2, 16, 16)
        src.setflags(write=False)
        luts.setflags(write=False)
        a = fast.clahe_blend(src, luts, 2, 2, 4, 4, 16, 16)
        b = pure.clahe_blend(src, luts, 2, 2, 4, 4, 16, 16)
        assert np.array_equal(a, b)


class TestDilateParity:
    def test_random_masks(self, rng):
        for _ in range(30):
            h, w = (int(v) for v in rng.integers(1, 50, size=2))
            mask = rng.random((h, w)) < float(rng.choice([0.01, 0.1, 0.5]))
            r = int(rng.integers(0, 12))
            a = np.asarray(fast.disk_dilate(mask, r))
            b = pure.disk_dilate(mask, r)
            assert a.dtype == np.bool_
            assert np.array_equal(a, b)

    def test_empty_and_full(self):
        empty = np.zeros((9, 9), dtype=bool)
        full = np.ones((9, 9), dtype=bool)
        for r in (0, 1, 5):
            assert np.array_equal(fast.disk_dilate(empty, r),
                                  pure.disk_dilate(empty, r))
            assert np.array_equal(fast.disk_dilate(full, r),
                                  pure.disk_dilate(full, r))

    def test_both_reject_negative_radius(self):
        mask = np.zeros((4, 4), dtype=bool)
        with pytest.raises(ValueError):
            fast.disk_dilate(mask, -1)
        with pytest.raises(ValueError):
            pure.disk_dilate(mask, -1)

    def test_read_only_input_accepted(self, rng):
        mask = rng.random((20, 20)) < 0.2
        mask.setflags(write=False)
        a = np.asarray(fast.disk_dilate(mask, 3))
        b = pure.disk_dilate(mask, 3)
        assert np.array_equal(a, b)
