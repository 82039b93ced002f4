"""Build script: compiles the optional C evaluation-loop kernels.

The package works without the extension (a numpy fallback is selected at
import time); building it just makes the Monte Carlo sweeps much faster.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "faq._kernels",
                ["src/faq/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    for ext in extensions:
        ext.optional = True  # failed compile degrades to the pure-python backend
except ImportError:
    extensions = []

setup(ext_modules=extensions)
