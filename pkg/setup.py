import os
import platform

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# libmvec supplies the vectorized exp/tanh that -ffast-math emits on x86-64 glibc.
if platform.system() == "Linux" and platform.machine() == "x86_64":
    compile_args = ["-O3", "-ffast-math", "-march=native"]
    libraries = ["mvec", "m"]
else:
    compile_args = ["-O3"]
    libraries = []
compile_args = os.environ.get("LIMBCHAN_CFLAGS", " ".join(compile_args)).split()

extensions = [
    Extension(
        "limbchan._kernels",
        ["src/limbchan/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=compile_args,
        libraries=libraries,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
