"""Build script for the optional compiled kernel core.

The package is fully functional without the extension (a NumPy fallback is
selected at import time), so compilation failures downgrade to a pure-Python
install instead of aborting.
"""

import sys

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "gridgen.kernels._core",
                ["src/gridgen/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffast-math", "-march=native"],
                # -ffast-math vectorizes libm calls into libmvec symbols
                extra_link_args=["-lmvec", "-lm"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError as exc:  # pragma: no cover - build environment dependent
    print(f"gridgen: building without compiled kernels ({exc})", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
