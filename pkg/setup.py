"""Build script for the optional compiled scoring kernel.

The kernel accelerates neighborhood scoring (the per-step hot loop). If the
extension cannot be built the package still installs and falls back to the
pure-Python scorer at import time, so a working C toolchain is not required.
"""

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible; never fail the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001 - any toolchain failure
            print(f"warning: skipping compiled scoring kernel ({exc!r}); "
                  "falling back to pure Python")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: could not build {ext.name} ({exc!r}); "
                  "falling back to pure Python")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("warning: Cython not available; building without the compiled kernel")
        return []
    ext = Extension(
        "memsteer._scorekernel",
        ["src/memsteer/_scorekernel.pyx"],
        # -ffp-contract=off keeps the kernel's float arithmetic bit-identical
        # to the pure-Python scorer (no fused multiply-add).
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
