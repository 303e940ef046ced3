import os

import numpy as np
from setuptools import Extension, setup

# HETSEQ_NO_EXT=1 installs the pure-Python fallback only.
# HETSEQ_NATIVE=1 tunes the kernel for the build machine's CPU.
ext_modules = []
if not os.environ.get("HETSEQ_NO_EXT"):
    from Cython.Build import cythonize

    # compile-only: -ffast-math at link time would pull in crtfastmath.o,
    # which flushes denormals for the whole process
    compile_args = ["-O3", "-ffast-math"]
    if os.environ.get("HETSEQ_NATIVE"):
        compile_args.append("-march=native")
    ext_modules = cythonize(
        [
            Extension(
                "hetseq.kernel._recurrence",
                ["src/hetseq/kernel/_recurrence.pyx"],
                include_dirs=[np.get_include(), "src/hetseq/kernel"],
                extra_compile_args=compile_args,
                libraries=["mvec", "m"],  # vector exp/tanh emitted under -ffast-math
            ),
            # strict IEEE: phase remainders and branch tests must match numpy
            Extension(
                "hetseq.kernel._phase",
                ["src/hetseq/kernel/_phase.pyx"],
                extra_compile_args=["-O2"],
            ),
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
