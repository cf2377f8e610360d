"""Shared checks for end-to-end tests."""

from pathlib import Path

from codegreen.telemetry import energy_between

FIXTURES = Path(__file__).parent / "fixtures"
SCRIPTS = FIXTURES / "scripts"
CORPUS = FIXTURES / "corpus"
POWERCAP = FIXTURES / "powercap"


def consistency_slack_uj(series, interval_ns):
    """Two sampling intervals' worth of energy at the observed peak power."""
    return 2 * interval_ns * series.max_power_w() / 1000


def assert_whole_program(root_region, series_by_domain, interval_ns):
    """Root-region energy matches the series total per domain."""
    for domain, series in series_by_domain.items():
        root = energy_between(series, root_region.t_begin, root_region.t_end).energy_uj
        total = series.total_uj()
        slack = consistency_slack_uj(series, interval_ns)
        assert abs(total - root) <= slack, (
            f"{domain}: root {root} uJ vs series {total} uJ, slack {slack:.0f} uJ")


def assert_report_consistent(result, interval_ns):
    """Same check, driven from a measure() result."""
    from codegreen.telemetry import DomainId, EnergySample, EnergySeries
    report = result.report
    root = result.regions[0]
    assert root.parent is None and root.key.function_name == "__process__"
    series = {}
    for name, data in report.get("series", {}).items():
        d = DomainId.parse(name)
        series[d] = EnergySeries(d, tuple(EnergySample(t, e) for t, e in data["samples"]))
    assert series, "measure() must be called with include_series=True"
    assert_whole_program(root, series, interval_ns)


def run_instrumented(path, config, workdir, args=(), env_extra=None):
    """Instrument ``path``, build it, run it once; returns (stdout, events, log diags, plan)."""
    import os
    import subprocess

    from codegreen import checkpoint as ck
    from codegreen.instrument import detect_language, instrument_file
    from codegreen.instrument.toolchain import command_for

    workdir = Path(workdir)
    language = detect_language(path)
    shadow, plan = instrument_file(path, workdir, config)
    argv = command_for(shadow, language, workdir / "build", [str(a) for a in args])
    logs = workdir / "ckpt"
    logs.mkdir(exist_ok=True)
    env = dict(os.environ, **(env_extra or {}))
    env[ck.CHECKPOINT_DIR_ENV] = str(logs)
    env["PYTHONPATH"] = str(Path(path).parent)
    proc = subprocess.run(argv, env=env, capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    files = ck.checkpoint_logs(logs)
    events, diags = ck.parse_checkpoint_log(files) if files else ([], [])
    return proc.stdout, events, diags, plan


def run_plain(path, workdir, args=()):
    """Stdout of the uninstrumented program."""
    import subprocess

    from codegreen.instrument import detect_language
    from codegreen.instrument.toolchain import command_for

    argv = command_for(path, detect_language(path), Path(workdir) / "plain", [str(a) for a in args])
    return subprocess.run(argv, capture_output=True, text=True, check=True, timeout=300).stdout
