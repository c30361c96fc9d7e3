import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("FERKD_NO_EXT"):
    from Cython.Build import cythonize
    import numpy as np

    ext_modules = cythonize(
        [
            Extension(
                "ferkd._kernels._cykernels",
                ["src/ferkd/_kernels/_cykernels.pyx"],
                include_dirs=[np.get_include()],
                # -ffp-contract=off: no FMA contraction, so the compiled
                # kernels are bit-identical to the pure-Python fallback.
                extra_compile_args=["-O3", "-ffp-contract=off"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
