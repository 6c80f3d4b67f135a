import os

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "regimepush._engine",
                ["src/regimepush/_engine.pyx"],
                # contraction off: the compiled engine must round exactly like
                # the numpy fallback so results agree bitwise
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    if os.environ.get("REGIMEPUSH_REQUIRE_KERNEL"):
        raise
    # no Cython: install the pure-python fallback only

setup(ext_modules=ext_modules)
