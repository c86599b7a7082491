import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernels fall back to numpy
    cythonize = None

compile_args = ["-O3"]
if os.environ.get("ANDERSON_DEPHASE_NATIVE", "1") == "1":
    compile_args.append("-march=native")

ext_modules = []
if cythonize is not None and os.environ.get("ANDERSON_DEPHASE_PURE") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "anderson_dephase._kernels",
                ["src/anderson_dephase/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=compile_args,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
