import numpy
from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "polarlink._kernels._native",
                sources=["src/polarlink/_kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-python kernels are selected at import time when the extension
    # is missing, so a Cython-less build still produces a working package.
    pass

setup(ext_modules=ext_modules)
