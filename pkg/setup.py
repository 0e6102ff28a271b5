"""Build script for the optional compiled kernels.

The package works without them: ``voxsyn.kernels`` falls back to the numpy
implementation when ``voxsyn._ckernels`` cannot be imported.
"""
import os

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            self.warn(f"compiled kernels not built ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - depends on toolchain
            self.warn(f"failed to build {ext.name} ({exc}); using numpy fallback")


ext_modules = []
if not os.environ.get("VOXSYN_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "voxsyn._ckernels",
                    ["src/voxsyn/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no fp contraction: kernels must match the numpy path bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
