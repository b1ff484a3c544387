"""Builds the optional Cython scoring kernel.

If Cython or a C compiler is unavailable the package still works: the
kernel selector in raftkit._kernels falls back to the numpy implementation.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "raftkit._kernels._scorekern",
                ["src/raftkit/_kernels/_scorekern.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
