"""Build the optional Cython kernels; the package falls back to numpy without them."""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("LAZYMAR_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "lazymar._kernels",
                    ["src/lazymar/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # fp-contract=off: an FMA would change the rounding of a*b+c
                    # and break bit-equality with the numpy fallback.
                    extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
