"""Optional compiled kernels.

The extension is built when Cython and numpy are importable; otherwise the
package installs pure Python and ``ddmres.kernels`` falls back to
``_kernels_py``.
"""
import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("DDMRES_NO_EXT", "") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("ddmres._kernels", ["src/ddmres/_kernels.pyx"],
                       include_dirs=[numpy.get_include()],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
