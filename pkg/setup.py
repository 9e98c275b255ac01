import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "needlemetrics._kernels_cy",
                ["src/needlemetrics/_kernels_cy.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    # Pure-python fallback in needlemetrics.backend takes over at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
