"""Build script for the optional compiled kernel extension.

The package works without the extension (pure numpy fallback); a failed
compile must not fail the install.  Set CXRPREP_NO_EXT=1 to skip the
extension entirely.
"""
import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing etc.
            print(f"warning: compiled kernels skipped ({exc}); "
                  "pure-python fallback will be used", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "pure-python fallback will be used", file=sys.stderr)


def make_ext_modules():
    if os.environ.get("CXRPREP_NO_EXT") == "1":
        return []
    try:
        from Cython.Build import cythonize
        import numpy as np
    except ImportError as exc:
        print(f"warning: {exc}; compiled kernels skipped", file=sys.stderr)
        return []
    ext = Extension(
        "cxrprep.kernels._fastkern",
        sources=["src/cxrprep/kernels/_fastkern.pyx"],
        include_dirs=[np.get_include()],
        # -ffp-contract=off keeps float results bit-identical to the
        # numpy fallback (no FMA fusion).
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=make_ext_modules(), cmdclass={"build_ext": optional_build_ext})
