import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the pure-Python fallback is used at runtime
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("CRITLAB_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "critlab._kernels",
                ["src/critlab/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": 3},
    )

setup(ext_modules=ext_modules)
