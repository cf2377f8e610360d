"""Command-line entry point: ``codegreen <command>``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .checkpoint import CHECKPOINT_DIR_ENV
from .config import (
    ConfigError,
    ToolConfig,
    config_dir,
    config_path,
    format_duration,
    load_config,
    parse_duration,
    save_config,
)
from .correlator import (
    CalibrationError,
    FixtureMissing,
    NonLinearCalibration,
    calibrate,
    dump_report,
)
from .instrument.engine import (
    EXTENSIONS,
    AlreadyInstrumented,
    InstrumentError,
    ParseError,
    UnsupportedLanguage,
    analyze_source,
)
from .measure import (
    MeasureError,
    NoProvider,
    confidence_interval,
    measure,
    run_benchmark,
    save_calibration,
    select_providers,
)
from .providers import (
    Adequacy,
    ProbeStatus,
    ProviderDescriptor,
    check_sampling_adequacy,
    discover_providers,
)
from .sampler import ProviderProbeFailed, SamplingConfig, SamplingSession

log = logging.getLogger("codegreen")

SENSORS_FILE = "sensors.json"
DEFAULT_CAL_COUNTS = (0, 1_000, 10_000, 100_000)
PERMISSION_HINT = """\
hint: energy_uj is root-only on recent kernels. codegreen never changes this itself; either
  sudo chmod o+r /sys/class/powercap/intel-rapl:*/energy_uj /sys/class/powercap/intel-rapl:*/*/energy_uj
(lost on reboot) or add a udev rule, e.g. /etc/udev/rules.d/70-powercap.rules:
  SUBSYSTEM=="powercap", ACTION=="add", RUN+="/bin/chmod o+r /sys%p/energy_uj\""""

# used only to warn when one interval could span two counter wraps
PLAUSIBLE_MAX_W = 500


def _duration(text: str) -> int:
    try:
        return parse_duration(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_duration(text: str) -> int:
    ns = _duration(text)
    if ns <= 0:
        raise argparse.ArgumentTypeError("duration must be positive")
    return ns


def _effective_config(args) -> ToolConfig:
    cfg = load_config()
    overrides = {
        "interval": getattr(args, "interval", None),
        "output": getattr(args, "output", None),
        "providers": getattr(args, "providers", None),
        "scopes": getattr(args, "scopes", None),
        "loop_mode": getattr(args, "loop_mode", None),
        "include": getattr(args, "include", None),
        "exclude": getattr(args, "exclude", None),
        "powercap_root": getattr(args, "powercap_root", None),
    }
    for key, value in overrides.items():
        if value is not None:
            cfg = cfg.with_value(key, format_duration(value) if key == "interval" else value)
    return cfg


def _fmt_j(uj: int) -> str:
    return f"{uj / 1e6:.6f}"


def print_report_text(report: dict, out=None):
    out = out or sys.stdout
    print(f"run {report['run_id']}", file=out)
    for dom, uj in report["totals"].items():
        print(f"  total {dom:<24} {_fmt_j(uj):>14} J", file=out)
    ov = report["overhead"]
    if ov["raw_pct"] is not None:
        norm = "n/a" if ov["normalized_pct"] is None else f"{ov['normalized_pct']:.1f}%"
        print(f"  overhead raw {ov['raw_pct']:.1f}%  normalized {norm}", file=out)
    print(f"  checkpoints {ov['n_checkpoints']}", file=out)
    print(file=out)
    print(f"{'function':<40} {'calls':>7} {'energy J':>14} {'mean J':>12} {'time s':>10}", file=out)
    for agg in report["aggregates"]:
        print(f"{agg['function']:<40} {agg['invocations']:>7} {_fmt_j(agg['total_energy_uj']):>14} "
              f"{agg['mean_energy_uj'] / 1e6:>12.6f} {agg.get('total_duration_ns', 0) / 1e9:>10.4f}",
              file=out)


# -- commands -------------------------------------------------------------------

def cmd_measure(args) -> int:
    cfg = _effective_config(args)
    try:
        result = measure(args.path, args.args, cfg, run_id=args.run_id, out_dir=args.out,
                         baseline=args.baseline, include_series=args.series,
                         report_path=args.report)
    except MeasureError as exc:
        log.error("%s", exc)
        return 2
    report = result.report
    if args.report:
        Path(args.report).write_text(dump_report(report) + "\n")
    if cfg.output == "json":
        print(dump_report(report))
    else:
        print_report_text(report)
    if result.exit_code:
        log.warning("program exited with status %d", result.exit_code)
    return result.exit_code


def _source_files(path: Path):
    if path.is_file():
        yield path
        return
    for root, dirs, files in os.walk(path):
        dirs[:] = sorted(d for d in dirs if not d.startswith("."))
        for name in sorted(files):
            if Path(name).suffix.lower() in EXTENSIONS:
                yield Path(root) / name


def cmd_analyze(args) -> int:
    cfg = _effective_config(args)
    path = Path(args.path)
    if not path.exists():
        log.error("no such path: %s", path)
        return 2
    for f in _source_files(path):
        print(f"== {f}")
        try:
            targets = analyze_source(f, config=cfg.granularity)
        except (ParseError, UnsupportedLanguage, AlreadyInstrumented, InstrumentError) as exc:
            print(f"  error  {exc}")
            continue
        except OSError as exc:
            print(f"  error  {exc}")
            continue
        for t in targets:
            node = t.node
            end = node.end_point[0] + 1 if node is not None else t.line
            print(f"  {t.kind:<8} {t.name:<40} {t.line}-{end}")
        if not targets:
            print("  (no targets)")
    return 0


def cmd_benchmark(args) -> int:
    cfg = _effective_config(args)
    try:
        providers = select_providers(cfg)
    except NoProvider as exc:
        log.error("%s", exc)
        return 2
    runs = [run_benchmark(args.duration, providers, cfg.interval_ns) for _ in range(args.repeat)]
    if cfg.output == "json":
        out = {"runs": [vars(r) for r in runs]}
        if args.repeat > 1:
            for key in ("energy_j", "power_w", "elapsed_s"):
                mean, lo, hi = confidence_interval([getattr(r, key) for r in runs])
                out[key] = {"mean": mean, "ci95": [lo, hi]}
        print(json.dumps(out, indent=2))
        return 0
    if args.repeat == 1:
        r = runs[0]
        print(f"energy   {r.energy_j:.4f} J")
        print(f"power    {r.power_w:.4f} W")
        print(f"elapsed  {r.elapsed_s:.4f} s")
        return 0
    print(f"{'metric':<10} {'mean':>12} {'95% CI':>28}")
    for key, label in (("energy_j", "energy J"), ("power_w", "power W"), ("elapsed_s", "elapsed s")):
        mean, lo, hi = confidence_interval([getattr(r, key) for r in runs])
        print(f"{label:<10} {mean:>12.4f} {f'[{lo:.4f}, {hi:.4f}]':>28}")
    return 0


def cmd_init_sensors(args) -> int:
    cfg = _effective_config(args)
    disc = discover_providers(cfg.powercap_root or None)
    path = config_dir() / SENSORS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "discovered_at_ns": time.time_ns(),
        "providers": [d.to_dict() for d in disc.descriptors],
        "diagnostics": [str(d) for d in disc.diagnostics],
    }
    path.write_text(json.dumps(payload, indent=2) + "\n")
    for d in disc.descriptors:
        print(f"{d.id:<12} {d.kind.value:<12} {', '.join(x.domain.value for x in d.domains)}")
    for diag in disc.diagnostics:
        print(f"warning: {diag}")
    print(f"saved {path}")
    return 0


def _print_descriptor(d: ProviderDescriptor):
    print(f"  {d.id} ({d.kind.value}), native interval {format_duration(d.native_update_interval_ns)}")
    for dom in d.domains:
        wrap = d.wrap_range(dom)
        print(f"    {str(dom):<28} wrap {wrap if wrap is not None else '-'}")


def cmd_info(args) -> int:
    cfg = _effective_config(args)
    print(f"codegreen {__version__}")
    print(f"config file: {config_path()}")
    for key, value in cfg.items():
        if key == "interval":
            value = re.sub(r"(\d)([a-z]+)$", r"\1 \2", value)
        print(f"  {key} = {value}")
    try:
        providers = select_providers(cfg)
    except NoProvider as exc:
        print(f"providers: none ({exc})")
        return 1
    print(f"providers: {len(providers)}")
    for p in providers:
        _print_descriptor(p.descriptor)
    return 0


def cmd_config(args) -> int:
    if args.key == "calibrate":
        return _calibrate(args)
    cfg = load_config()
    if args.key is None:
        for key, value in cfg.items():
            print(f"{key} = {value}")
        return 0
    if args.value is None:
        try:
            print(cfg.get(args.key))
        except ConfigError as exc:
            log.error("%s", exc)
            return 2
        return 0
    try:
        cfg = cfg.with_value(args.key, args.value)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    path = save_config(cfg)
    print(f"{args.key} = {cfg.get(args.key)}  ({path})")
    return 0


def _calibrate(args) -> int:
    if args.value is None:
        log.error("usage: codegreen config calibrate <language>")
        return 2
    lang = args.value
    try:
        model = calibrate(lang, list(DEFAULT_CAL_COUNTS), args.repetitions)
        status = 0
    except NonLinearCalibration as exc:
        log.warning("%s; model stored but flagged as rejected", exc)
        model, status = exc.model, 1
    except (FixtureMissing, CalibrationError) as exc:
        log.error("%s", exc)
        return 2
    path = save_calibration(model)
    print(f"{lang}: t_base {model.t_base_ns / 1e6:.3f} ms, t_checkpoint {model.t_checkpoint_ns:.1f} ns, "
          f"R^2 {model.r_squared:.4f}  ({path})")
    return status


class _Checks:
    def __init__(self):
        self.failed = 0

    def report(self, ok: bool, name: str, detail: str = ""):
        self.failed += not ok
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))


def cmd_doctor(args) -> int:
    cfg = _effective_config(args)
    checks = _Checks()
    disc = discover_providers(cfg.powercap_root or None)
    denied = False
    for diag in disc.diagnostics:
        if diag.status is not ProbeStatus.NOT_PRESENT:
            denied |= diag.status is ProbeStatus.PERMISSION_DENIED
            checks.report(False, f"read {diag.provider}", f"{diag.status.value} {diag.path}")
    try:
        providers = select_providers(cfg, disc)
    except NoProvider as exc:
        checks.report(False, "providers", str(exc))
        return 1
    now = time.monotonic_ns()
    for p in providers:
        for dom in p.domains:
            path = p.descriptor.paths.get(dom)
            where = os.path.join(path, "energy_uj") if path else str(dom)
            try:
                value = p.read_cumulative(dom, now)
                checks.report(True, f"read {dom}", f"{value} uJ")
            except Exception as exc:
                denied |= isinstance(exc, PermissionError) or isinstance(exc.__cause__, PermissionError)
                checks.report(False, f"read {dom}", f"{where}: {exc}")
            wrap = p.descriptor.wrap_range(dom)
            if wrap and cfg.interval_ns * PLAUSIBLE_MAX_W // 1000 > wrap // 2:
                print(f"warning: {dom} could wrap more than once per {format_duration(cfg.interval_ns)} "
                      f"interval at {PLAUSIBLE_MAX_W} W (range {wrap} uJ)")
        verdict, msg = check_sampling_adequacy(p.descriptor, cfg.interval_ns)
        checks.report(verdict is not Adequacy.ALIASING_RISK, f"adequacy {p.descriptor.id}",
                      msg or verdict.value)
    if not checks.failed:
        try:
            session = SamplingSession(SamplingConfig.for_providers(
                providers, interval_ns=min(cfg.interval_ns, 10_000_000))).start()
            time.sleep(0.1)
            series = session.stop()
            short = [str(d) for d, s in series.items() if len(s) < 2]
            checks.report(not short, "sampling self-test (100 ms)",
                          f"too few samples for {', '.join(short)}" if short
                          else f"{min(len(s) for s in series.values())}+ samples per domain")
        except ProviderProbeFailed as exc:
            checks.report(False, "sampling self-test (100 ms)", str(exc))
    target = Path(os.environ.get(CHECKPOINT_DIR_ENV) or tempfile.gettempdir())
    try:
        with tempfile.NamedTemporaryFile(dir=target, prefix="codegreen-doctor-"):
            pass
        checks.report(True, "checkpoint dir writable", str(target))
    except OSError as exc:
        checks.report(False, "checkpoint dir writable", f"{target}: {exc}")
    if cfg.accuracy_threshold:
        print("note: accuracy_threshold is reserved and currently has no effect")
    if denied:
        print(PERMISSION_HINT)
    return 1 if checks.failed else 0


# -- parser ---------------------------------------------------------------------

def _add_selection(p):
    p.add_argument("--scopes", help="comma list of function,method,class,loop")
    p.add_argument("--loop-mode", dest="loop_mode", choices=["whole_loop", "per_iteration"])
    p.add_argument("--include", help="comma list of name globs to keep")
    p.add_argument("--exclude", help="comma list of name globs to drop")


def _add_sources(p):
    p.add_argument("--providers", help="comma list of auto,rapl,synthetic,gpu_stub")
    p.add_argument("--powercap-root", dest="powercap_root", help="powercap sysfs root")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="codegreen", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measure", help="run a program and attribute energy to its regions")
    p.add_argument("path")
    p.add_argument("args", nargs="*", help="arguments for the program (put them after -- if they start with -)")
    p.add_argument("--interval", type=_positive_duration, help="sampling interval, e.g. 1ms")
    p.add_argument("--output", choices=["text", "json"])
    p.add_argument("--report", help="also write the JSON report here")
    p.add_argument("--out", help="working directory for the shadow copy and logs")
    p.add_argument("--baseline", action="store_true", help="time one uninstrumented run first")
    p.add_argument("--series", action="store_true", help="include raw samples in the report")
    p.add_argument("--run-id", dest="run_id")
    _add_selection(p)
    _add_sources(p)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("analyze", help="list instrumentation targets without running anything")
    p.add_argument("path")
    _add_selection(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("benchmark", help="sample a built-in stress loop")
    p.add_argument("--duration", type=_positive_duration, required=True)
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--interval", type=_positive_duration)
    p.add_argument("--output", choices=["text", "json"])
    _add_sources(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("init-sensors", help="discover providers and save them")
    _add_sources(p)
    p.set_defaults(func=cmd_init_sensors)

    p = sub.add_parser("info", help="show configuration and providers")
    _add_sources(p)
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("config", help="show or set configuration; 'config calibrate <lang>'")
    p.add_argument("key", nargs="?")
    p.add_argument("value", nargs="?")
    p.add_argument("--repetitions", type=int, default=5, help="runs per count when calibrating")
    p.set_defaults(func=cmd_config)

    p = sub.add_parser("doctor", help="check sensors, sampling and permissions")
    p.add_argument("--interval", type=_positive_duration)
    _add_sources(p)
    p.set_defaults(func=cmd_doctor)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "repeat", 1) < 1:
        parser.error("--repeat must be at least 1")
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
