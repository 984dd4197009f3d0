from setuptools import Extension, setup

import numpy as np

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled kernels are optional: if the build fails (no compiler, no
# Cython), the package falls back to the NumPy implementations at import.
ext = Extension(
    "transportsens._kernels._core",
    ["src/transportsens/_kernels/_core.pyx"],
    include_dirs=[np.get_include()],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    optional=True,
)

setup(ext_modules=cythonize([ext]) if cythonize is not None else [])
