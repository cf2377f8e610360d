"""Runners for the per-language no-op calibration programs.

Each program performs ``CODEGREEN_CALIBRATION_COUNT`` checkpoint events
(half begins, half ends) and nothing else.  The native variant is the same
program with the shims stubbed out, run with a count of zero, so that the
difference isolates instrumentation cost including runtime start-up of the
shim prologue.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import tempfile
import time
from importlib import resources
from pathlib import Path
from string import Template
from typing import Callable

from ..correlator import FixtureMissing
from . import toolchain
from .engine import shim_template

COUNT_ENV = "CODEGREEN_CALIBRATION_COUNT"

_C_STUBS = """#include <stdlib.h>
static unsigned long _cg_cnt[1];
#define _cg_begin(name, counter) ((void)(name), (void)(counter), 0)
#define _cg_end(d) ((void)(d))
"""
_PY_STUBS = "def _cg_begin(name):\n    return 0\n\n\ndef _cg_end(depth):\n    pass\n\n\n"


def _fixture(name: str) -> str:
    asset = resources.files("codegreen.instrument").joinpath("fixtures", name)
    if not asset.is_file():
        raise FixtureMissing(f"no calibration fixture {name}")
    return asset.read_text()


def _sources(runtime_id: str) -> tuple[str, str, str]:
    """(file name, instrumented text, native text)."""
    if runtime_id == "python":
        body = _fixture("noop.py")
        return "noop.py", shim_template("python.txt") + "\n" + body, _PY_STUBS + body
    if runtime_id in ("c", "cpp"):
        ext = "c" if runtime_id == "c" else "cpp"
        body = _fixture(f"noop.{ext}")
        prologue = Template(shim_template("c.txt")).substitute(ncounters=1)
        if runtime_id == "cpp":
            prologue += "\n" + shim_template("cpp.txt")
        return f"noop.{ext}", prologue + "\n" + body, _C_STUBS + body
    raise FixtureMissing(f"no calibration fixture for runtime {runtime_id!r}")


def _timed(argv: list[str], env: dict) -> int:
    t0 = time.perf_counter_ns()
    proc = subprocess.run(argv, env=env, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
    elapsed = time.perf_counter_ns() - t0
    if proc.returncode != 0:
        raise FixtureMissing(f"calibration program failed: {proc.stderr.decode(errors='replace')[-500:]}")
    return elapsed


def fixture_runners(runtime_id: str, workdir: str | os.PathLike | None = None
                    ) -> tuple[Callable[[int], float], Callable[[], float]]:
    """Build the no-op fixture for ``runtime_id``; return (runner(N), native_runner())."""
    if not toolchain.has_toolchain(runtime_id):
        raise FixtureMissing(f"no toolchain available for {runtime_id}")
    name, inst_text, native_text = _sources(runtime_id)
    base = Path(workdir or tempfile.mkdtemp(prefix="codegreen-cal-"))
    inst_dir, native_dir, ckpt_dir = base / "inst", base / "native", base / "ckpt"
    for d in (inst_dir, native_dir, ckpt_dir):
        d.mkdir(parents=True, exist_ok=True)
    (inst_dir / name).write_text(inst_text)
    (native_dir / name).write_text(native_text)
    lang = runtime_id
    try:
        inst_argv = toolchain.build(inst_dir / name, lang, inst_dir)
        native_argv = toolchain.build(native_dir / name, lang, native_dir)
    except toolchain.BuildFailed as exc:
        raise FixtureMissing(f"{exc}\n{exc.output}") from exc

    def runner(n: int) -> float:
        env = dict(os.environ, **{COUNT_ENV: str(int(n)), "CODEGREEN_CHECKPOINT_DIR": str(ckpt_dir)})
        try:
            return _timed(inst_argv, env)
        finally:
            for p in ckpt_dir.iterdir():
                p.unlink()

    def native_runner() -> float:
        env = dict(os.environ, **{COUNT_ENV: "0"})
        env.pop("CODEGREEN_CHECKPOINT_DIR", None)
        return _timed(native_argv, env)

    return runner, native_runner


def cleanup(workdir: str | os.PathLike):
    shutil.rmtree(workdir, ignore_errors=True)
