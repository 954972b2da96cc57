"""Build script for the compiled kinematics kernel.

The extension is optional: if the build fails (no compiler, no Cython), the
package installs anyway and falls back to the pure-numpy kernel at import.
"""

import numpy as np
from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, etc.
            print(f"warning: compiled kernel skipped ({exc}); pure fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: {ext.name} skipped ({exc}); pure fallback will be used")


try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/armteleop/core/_kincore.pyx",
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(
    ext_modules=ext_modules,
    include_dirs=[np.get_include()],
    cmdclass={"build_ext": OptionalBuildExt},
)
