import os

from setuptools import setup

ext_modules = []
if os.environ.get("MICROREDUCE_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "microreduce.kernels._speedups",
                    ["src/microreduce/kernels/_speedups.pyx"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # No Cython available: install pure-Python only; the kernels
        # package falls back automatically at import time.
        ext_modules = []

setup(ext_modules=ext_modules)
