"""Build the optional Cython kernels; the package works without them."""

import os
import platform
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing etc.
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using numpy fallback")


def _vector_math():
    # glibc's libmvec supplies SIMD exp on x86-64 Linux; -ffast-math is passed
    # to the compiler only, so crtfastmath (flush-to-zero) is never linked.
    if os.environ.get("CLOVER_NO_FASTMATH"):
        return [], []
    if sys.platform.startswith("linux") and platform.machine() in ("x86_64", "AMD64"):
        return ["-ffast-math"], ["mvec"]
    return [], []


try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    flags, libs = _vector_math()
    ext_modules = cythonize(
        [
            Extension(
                "clover._core._kernels",
                ["src/clover/_core/_kernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", *flags],
                libraries=libs,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
