"""Build script for the compiled engine core.

The package is fully functional without the extension (a pure-Python
fallback is selected at import time), but stepped-sine runs are one to
two orders of magnitude faster with it.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "vibench._engine._core",
                ["src/vibench/_engine/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    # No Cython available: install the pure-Python package only.
    ext_modules = []

setup(ext_modules=ext_modules)
