"""Build script: compiles the balancing-walk kernels when a toolchain is available.

The extension is optional. If Cython or the C compiler is missing (or the
build fails), the package installs anyway and `zimpute._kernels` falls back
to the pure-Python twin at import time.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """build_ext that degrades to a warning instead of failing the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, misconfigured, ...
            warnings.warn(f"compiled kernels skipped ({exc}); using pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernels skipped ({exc}); using pure-Python fallback")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("Cython not available; using pure-Python kernels")
        return []
    ext = Extension(
        "zimpute._kernels._ckernels",
        sources=["src/zimpute/_kernels/_ckernels.pyx"],
        # -ffp-contract=off: no FMA contraction, so the compiled kernels are
        # bit-identical to the pure-Python twin (same IEEE double ops).
        extra_compile_args=["-O2", "-ffp-contract=off"],
    )
    return cythonize([ext], language_level="3")


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
