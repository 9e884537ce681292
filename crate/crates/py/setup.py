"""Build the nullrec_py extension by delegating to cargo.

The extension is a plain cdylib; this shim compiles it with the
`extension-module` feature and copies the artifact to wherever
setuptools expects the compiled module.
"""

import shutil
import subprocess
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

CRATE_DIR = Path(__file__).resolve().parent
WORKSPACE = CRATE_DIR.parent.parent


def built_artifact() -> Path:
    stems = ["libnullrec_py.so", "libnullrec_py.dylib", "nullrec_py.dll"]
    release = WORKSPACE / "target" / "release"
    for stem in stems:
        candidate = release / stem
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no nullrec_py cdylib under {release}")


class CargoExtension(Extension):
    def __init__(self, name: str):
        super().__init__(name, sources=[])


class CargoBuildExt(build_ext):
    def build_extension(self, ext: Extension) -> None:
        subprocess.run(
            [
                "cargo",
                "build",
                "--release",
                "-p",
                "nullrec-py",
                "--features",
                "extension-module",
            ],
            cwd=CRATE_DIR,
            check=True,
        )
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built_artifact(), dest)


setup(
    ext_modules=[CargoExtension("nullrec_py")],
    cmdclass={"build_ext": CargoBuildExt},
)
