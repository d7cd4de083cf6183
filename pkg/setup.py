"""Build script for the compiled simulation kernel.

The package works without the extension (a numpy reference backend is
selected at import time), so a failed Cython build only costs speed.
Set GAITLAB_SKIP_NATIVE=1 to skip the extension build entirely.
"""

import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("GAITLAB_SKIP_NATIVE"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "gaitlab._kernels.native",
                    ["src/gaitlab/_kernels/native.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
