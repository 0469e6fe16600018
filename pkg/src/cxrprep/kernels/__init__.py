"""Hot-loop kernels: compiled extension when available, numpy fallback otherwise.

Both lanes are bit-identical by contract (see tests/test_kernels.py).
CXRPREP_PURE=1 forces the fallback, which is what the benchmark uses to
compare the two.
"""
import os

if os.environ.get("CXRPREP_PURE") == "1":
    from . import pure as _impl
else:
    try:
        from . import _fastkern as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import pure as _impl

BACKEND = _impl.BACKEND_NAME
resize_bilinear = _impl.resize_bilinear
clahe_blend = _impl.clahe_blend
disk_dilate = _impl.disk_dilate

__all__ = ["BACKEND", "resize_bilinear", "clahe_blend", "disk_dilate"]
