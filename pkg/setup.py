"""Build script for the optional compiled attention kernels.

The package works without the extension (a numpy fallback is selected at
import time), so the extension is marked optional: a failed compile must
not break installation.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build still works, ext skipped
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext = Extension(
        "tokencull.kernels._attn_ext",
        sources=["src/tokencull/kernels/_attn_ext.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext.optional = True
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
