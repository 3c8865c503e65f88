import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; the fallback kernel is used
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension(
            "capalloc.allocator._kernel",
            sources=["src/capalloc/allocator/_kernel.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            optional=True,
        )],
        language_level=3,
    )

setup(ext_modules=ext_modules)
