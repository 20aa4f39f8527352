"""Build script: compiles the optional Cython kernels.

The package is fully functional without the compiled extension (a numpy
reference implementation is selected at import time), so a failed build of
``gencov._kernels._core`` downgrades to a warning rather than aborting the
install.
"""

import warnings

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "gencov._kernels._core",
                ["src/gencov/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    warnings.warn(f"Cython kernels will not be built ({exc}); using the numpy fallback.")
    extensions = []

setup(ext_modules=extensions)
