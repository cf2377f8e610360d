"""The measure pipeline: instrument, spawn under sampling, correlate, report."""

from __future__ import annotations

import json
import logging
import os
import platform
import shutil
import signal
import statistics
import subprocess
import tempfile
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import checkpoint as ck
from .config import ToolConfig, config_dir
from .correlator import OverheadModel, attribute, build_report, total_energy
from .errors import CodeGreenError
from .instrument import toolchain
from .instrument.engine import InstrumentError, detect_language, instrument_file
from .providers import (
    Discovery,
    EnergyProvider,
    ProviderKind,
    SyntheticProvider,
    SyntheticWaveform,
    discover_providers,
    open_provider,
)
from .sampler import SamplingConfig, SamplingSession, default_capacity
from .telemetry import energy_between

logger = logging.getLogger(__name__)

ROOT_REGION = "__process__"
# a child on the same monotonic clock shows only read-skew noise in its anchor
SAME_CLOCK_TOLERANCE_NS = 1_000_000


class MeasureError(CodeGreenError):
    pass


class InstrumentationFailed(MeasureError):
    pass


class SpawnFailed(MeasureError):
    pass


class NoProvider(MeasureError):
    pass


@dataclass
class RunManifest:
    run_id: str
    command: list[str]
    start_wall_ns: int
    clock_offset_ns: int
    clock_offset_applied: bool
    sampling: dict
    providers: list[dict]
    checkpoint_dir: str
    report_path: str | None = None
    language: str | None = None
    host: str = field(default_factory=platform.node)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MeasureResult:
    exit_code: int
    report: dict
    manifest: RunManifest
    events: list
    regions: list
    log_diagnostics: list
    pairing_diagnostics: list


def new_run_id() -> str:
    return time.strftime("%Y%m%dT%H%M%S") + "-" + uuid.uuid4().hex[:8]


def select_providers(cfg: ToolConfig, discovery: Discovery | None = None) -> list[EnergyProvider]:
    """Open the providers named in the config.

    ``auto`` means RAPL when any readable zone exists, else the synthetic
    provider.  Real and synthetic domains are never mixed implicitly.
    """
    discovery = discovery or discover_providers(cfg.powercap_root or None,
                                                enable_gpu_stub="gpu_stub" in cfg.providers)
    waveform = SyntheticWaveform(base_watts=cfg.synthetic_watts)
    by_kind: dict[ProviderKind, list] = {}
    for desc in discovery.descriptors:
        by_kind.setdefault(desc.kind, []).append(desc)
    wanted = set(cfg.providers)
    if "auto" in wanted:
        wanted.discard("auto")
        wanted.add("rapl" if by_kind.get(ProviderKind.RAPL_SYSFS) else "synthetic")
    out: list[EnergyProvider] = []
    if "rapl" in wanted:
        out += [open_provider(d) for d in by_kind.get(ProviderKind.RAPL_SYSFS, [])]
    if "synthetic" in wanted:
        out.append(SyntheticProvider(waveform))
    if "gpu_stub" in wanted:
        out += [open_provider(d) for d in by_kind.get(ProviderKind.GPU_STUB, [])]
    if not out:
        raise NoProvider(f"none of the requested providers ({', '.join(cfg.providers)}) is available")
    return out


def calibration_path(language: str, directory: Path | None = None) -> Path:
    return (directory or config_dir()) / "calibration" / f"{language}-{platform.node() or 'host'}.json"


def load_calibration(language: str, directory: Path | None = None) -> OverheadModel | None:
    path = calibration_path(language, directory)
    if not path.is_file():
        return None
    try:
        return OverheadModel.from_dict(json.loads(path.read_text()))
    except (ValueError, TypeError) as exc:
        logger.warning("ignoring unreadable calibration cache %s: %s", path, exc)
        return None


def save_calibration(model: OverheadModel, directory: Path | None = None) -> Path:
    path = calibration_path(model.runtime_id, directory)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict(), indent=2) + "\n")
    return path


def clock_offset(anchors: dict[int, tuple[int, int]], pid: int,
                 cli_anchor: tuple[int, int]) -> int:
    """Child monotonic minus CLI monotonic, via each side's wall-clock anchor."""
    if pid not in anchors:
        return 0
    c_wall, c_mono = anchors[pid]
    wall, mono = cli_anchor
    return (c_mono - c_wall) - (mono - wall)


def with_root(regions: Sequence[ck.Region], pid: int, t_begin: int, t_end: int) -> list[ck.Region]:
    """Put a process-lifetime region above every top-level region."""
    root = ck.CheckpointKey(ROOT_REGION, 1, pid)
    out = [ck.Region(root, t_begin, t_end, None, 0)]
    for r in regions:
        out.append(ck.Region(r.key, r.t_begin, r.t_end, r.parent or root, r.depth + 1))
    return out


def _exit_code(returncode: int) -> int:
    return 128 - returncode if returncode < 0 else returncode


def _build_command(path: Path, language: str, workdir: Path, args: Sequence[str]) -> list[str]:
    try:
        return toolchain.command_for(path, language, workdir, args)
    except (toolchain.ToolchainMissing, toolchain.BuildFailed) as exc:
        detail = getattr(exc, "output", "")
        raise InstrumentationFailed(f"{exc}\n{detail}".rstrip()) from exc


def _child_env(run_id: str, ckpt_dir: Path, script: Path, language: str) -> dict:
    env = dict(os.environ)
    env[ck.CHECKPOINT_DIR_ENV] = str(ckpt_dir)
    env[ck.RUN_ID_ENV] = run_id
    if language == "python":
        # the shadow copy still imports its siblings from the original location
        parts = [str(script.parent.resolve())]
        if env.get("PYTHONPATH"):
            parts.append(env["PYTHONPATH"])
        env["PYTHONPATH"] = os.pathsep.join(parts)
    return env


def run_native(script: Path, args: Sequence[str], workdir: Path) -> int:
    """Elapsed ns of one uninstrumented run."""
    language = detect_language(script)
    argv = _build_command(script, language, workdir / "native", args)
    env = dict(os.environ)
    env.pop(ck.CHECKPOINT_DIR_ENV, None)
    t0 = time.monotonic_ns()
    subprocess.run(argv, env=env, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    return time.monotonic_ns() - t0


def measure(script: str | os.PathLike, args: Sequence[str] = (), cfg: ToolConfig | None = None,
            *, run_id: str | None = None, out_dir: str | os.PathLike | None = None,
            providers: Sequence[EnergyProvider] | None = None, baseline: bool = False,
            include_series: bool = False, report_path: str | None = None,
            model: OverheadModel | None = None, stdout=None, stderr=None) -> MeasureResult:
    cfg = cfg or ToolConfig()
    script = Path(script)
    if not script.is_file():
        raise SpawnFailed(f"no such file: {script}")
    run_id = run_id or new_run_id()
    base = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix=f"codegreen-{run_id}-"))
    ckpt_dir = base / "checkpoints"
    if ckpt_dir.exists():
        shutil.rmtree(ckpt_dir)
    ckpt_dir.mkdir(parents=True)

    try:
        language = detect_language(script)
        shadow, plan = instrument_file(script, base, cfg.granularity)
    except InstrumentError as exc:
        raise InstrumentationFailed(f"{script}: {exc}") from exc
    argv = _build_command(shadow, language, base / "build", args)
    t_native = run_native(script, args, base) if baseline else None
    if model is None:
        model = load_calibration(language)

    providers = list(providers) if providers is not None else select_providers(cfg)
    sconfig = SamplingConfig.for_providers(providers, interval_ns=cfg.interval_ns,
                                           buffer_capacity=default_capacity(60 * 10**9, cfg.interval_ns))
    session = SamplingSession(sconfig)
    env = _child_env(run_id, ckpt_dir, script, language)
    start_wall = time.time_ns()
    cli_anchor = (time.time_ns(), time.monotonic_ns())
    session.start()
    t_spawn = time.monotonic_ns()
    try:
        proc = subprocess.Popen(argv, env=env, stdout=stdout, stderr=stderr)
    except OSError as exc:
        session.stop()
        raise SpawnFailed(f"cannot start {argv[0]}: {exc}") from exc
    try:
        returncode = proc.wait()
    except KeyboardInterrupt:
        proc.send_signal(signal.SIGINT)
        returncode = proc.wait()
    t_exit = time.monotonic_ns()
    series = session.stop()

    logs = ck.checkpoint_logs(ckpt_dir)
    events, log_diags = ck.parse_checkpoint_log(logs) if logs else ([], [])
    offset = clock_offset(ck.read_anchors(ckpt_dir), proc.pid, cli_anchor)
    applied = abs(offset) > SAME_CLOCK_TOLERANCE_NS
    if applied:
        events = ck.shift_events(events, offset)
    regions, pair_diags = ck.pair_regions(events)
    regions = with_root(regions, proc.pid, t_spawn, t_exit)
    forest = attribute(regions, series)

    manifest = RunManifest(
        run_id=run_id,
        command=[str(script), *args],
        start_wall_ns=start_wall,
        clock_offset_ns=offset,
        clock_offset_applied=applied,
        sampling={"interval_ns": cfg.interval_ns, "buffer_capacity": sconfig.buffer_capacity,
                  "dropped": {str(d): n for d, n in session.dropped_count.items()}},
        providers=[p.descriptor.to_dict() for p in providers],
        checkpoint_dir=str(ckpt_dir),
        report_path=report_path,
        language=language,
        diagnostics={
            "log": len(log_diags),
            "pairing": {i.value: sum(1 for d in pair_diags if d.issue is i) for i in ck.PairingIssue},
            "sampler_read_failures": len(session.diagnostics),
            "targets": len(plan.targets),
        },
    )
    (base / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    report = build_report(forest, series, model, manifest.to_dict(), run_id=run_id,
                          n_checkpoints=len(events), t_inst_ns=t_exit - t_spawn,
                          t_native_ns=t_native, include_series=include_series)
    for d in pair_diags:
        logger.warning("checkpoint %s: %s at %d", d.key, d.issue.value, d.ts)
    return MeasureResult(_exit_code(returncode), report, manifest, events, regions,
                         log_diags, pair_diags)


def benchmark_workload(duration_ns: int) -> int:
    """Single-threaded integer arithmetic until ``duration_ns`` has elapsed."""
    end = time.monotonic_ns() + duration_ns
    x = 1
    while time.monotonic_ns() < end:
        for i in range(2000):
            x = (x * 1103515245 + 12345) & 0x7FFFFFFF
    return x


@dataclass
class BenchmarkRun:
    energy_j: float
    power_w: float
    elapsed_s: float


def run_benchmark(duration_ns: int, providers: Sequence[EnergyProvider],
                  interval_ns: int) -> BenchmarkRun:
    sconfig = SamplingConfig.for_providers(
        providers, interval_ns=interval_ns,
        buffer_capacity=default_capacity(duration_ns, interval_ns))
    session = SamplingSession(sconfig).start()
    t0 = time.monotonic_ns()
    benchmark_workload(duration_ns)
    t1 = time.monotonic_ns()
    series = session.stop()
    uj = total_energy({d: energy_between(s, t0, t1).energy_uj for d, s in series.items()})
    elapsed = (t1 - t0) / 1e9
    return BenchmarkRun(uj / 1e6, uj / 1e6 / elapsed if elapsed else 0.0, elapsed)


def confidence_interval(values: Sequence[float], level: float = 0.95) -> tuple[float, float, float]:
    """(mean, low, high) using the t distribution."""
    from scipy import stats
    mean = statistics.fmean(values)
    if len(values) < 2:
        return mean, mean, mean
    half = stats.t.ppf((1 + level) / 2, len(values) - 1) * statistics.stdev(values) / len(values) ** 0.5
    return mean, mean - half, mean + half
