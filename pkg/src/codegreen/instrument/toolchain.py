"""Turn an instrumented source file into a command line that runs it."""

from __future__ import annotations

import shutil
import subprocess
import sys
from pathlib import Path
from typing import Sequence

from .engine import InstrumentError

COMPILERS = {"c": ("gcc", "cc", "clang"), "cpp": ("g++", "c++", "clang++")}
C_FLAGS = ("-O2", "-pthread")
CXX_FLAGS = ("-O2", "-pthread", "-std=c++17")


class ToolchainMissing(InstrumentError):
    pass


class BuildFailed(InstrumentError):
    def __init__(self, message, output=""):
        super().__init__(message)
        self.output = output


def find_compiler(language: str) -> str | None:
    if language == "java":
        return shutil.which("javac") if shutil.which("java") else None
    for name in COMPILERS.get(language, ()):
        path = shutil.which(name)
        if path:
            return path
    return None


def has_toolchain(language: str) -> bool:
    return language == "python" or find_compiler(language) is not None


def build(source: str | Path, language: str, out_dir: str | Path) -> list[str]:
    """Compile if needed and return the argv prefix that runs the program."""
    source = Path(source)
    out_dir = Path(out_dir)
    if language == "python":
        return [sys.executable, str(source)]
    compiler = find_compiler(language)
    if compiler is None:
        raise ToolchainMissing(f"no {language} toolchain on PATH")
    out_dir.mkdir(parents=True, exist_ok=True)
    if language == "java":
        cmd = [compiler, "-d", str(out_dir), str(source)]
        run = ["java", "-cp", str(out_dir), source.stem]
    else:
        exe = out_dir / (source.stem + ".bin")
        flags = CXX_FLAGS if language == "cpp" else C_FLAGS
        cmd = [compiler, *flags, "-o", str(exe), str(source), "-lm"]
        run = [str(exe)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise BuildFailed(f"{Path(compiler).name} failed on {source.name}", proc.stderr)
    return run


def command_for(source: str | Path, language: str, out_dir: str | Path,
                args: Sequence[str] = ()) -> list[str]:
    return build(source, language, out_dir) + list(args)
