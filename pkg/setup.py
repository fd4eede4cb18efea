import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


class OptionalBuildExt(build_ext):
    """Build the compiled rasterizer kernels, but fall back to the pure
    numpy implementation (selected at import) if compilation fails."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"WARNING: compiled kernels unavailable ({exc}); "
                  "layersplat will use the numpy fallback renderer.")


extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "layersplat.renderer._kernels",
                ["src/layersplat/renderer/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=extensions, cmdclass={"build_ext": OptionalBuildExt})
