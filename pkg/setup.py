"""Builds the optional compiled kernels.

The package is pure Python plus one Cython extension for the per-step
inference hot path.  The extension is marked optional: if the build fails
(no compiler, no Cython), installation still succeeds and the package
falls back to the numpy implementation at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "codedcast._speedups",
                ["src/codedcast/_speedups.pyx"],
                libraries=["m"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
