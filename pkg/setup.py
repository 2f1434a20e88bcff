import os

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # build without the compiled core
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("SBMCV_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "sbmcv._bp_core",
                ["src/sbmcv/_bp_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
