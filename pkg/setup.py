"""Build the optional compiled kernels; the package falls back to numpy without them."""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("parallel_refractor._ckernels", ["src/parallel_refractor/_ckernels.pyx"],
                   extra_compile_args=["-O3"], optional=True)],
        language_level=3,
    )

setup(ext_modules=ext_modules)
