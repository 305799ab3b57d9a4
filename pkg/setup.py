"""Build script: compiles the scan-recurrence extension when Cython and a C
compiler are available. The package falls back to the pure-numpy kernels at
import time if the extension is missing, so a plain-Python install also works
(set EVSEG_NO_EXT=1 to force that)."""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("EVSEG_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "evseg.kernels._recurrence_cy",
                    ["src/evseg/kernels/_recurrence_cy.pyx"],
                    # -ffp-contract=off keeps the C arithmetic bit-identical
                    # to the numpy fallback (no FMA contraction).
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
