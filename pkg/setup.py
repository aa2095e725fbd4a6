"""Builds the optional Cython kernel; the package falls back to numpy if absent."""
from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "polymodel.kernels._shuffle_cy",
                ["src/polymodel/kernels/_shuffle_cy.pyx"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
