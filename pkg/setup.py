"""Build hook for the optional compiled kernels.

If Cython or a C compiler is missing the package still installs and
``sao.kernels`` falls back to the numpy implementation.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "sao._kernels_c",
                ["src/sao/_kernels_c.pyx"],
                include_dirs=[np.get_include(), "src/sao"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-march=native"],
                optional=True,
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
