import json
import os
import re
import shutil

import jsonschema
import pytest

from codegreen import cli
from codegreen import providers as pv
from codegreen.config import ConfigError, ToolConfig, format_duration, load_config, parse_duration
from codegreen.correlator import report_schema
from codegreen.measure import SAME_CLOCK_TOLERANCE_NS, measure

from helpers import POWERCAP, SCRIPTS, assert_report_consistent

MS = 1_000_000


def run(capfd, *argv):
    code = cli.main(list(argv))
    out, err = capfd.readouterr()
    return code, out, err


def shape(value, volatile=False):
    """Structure of a report with measured quantities and thread ids blanked out."""
    if isinstance(value, dict):
        return {k: shape(v, volatile or k == "manifest") for k, v in value.items()}
    if isinstance(value, list):
        return [shape(v, volatile) for v in value]
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, (int, float)):
        return type(value).__name__
    return type(value).__name__ if volatile else re.sub(r"_t\d+$", "_tN", value)


class TestConfig:
    @pytest.mark.parametrize("text, ns", [("1ms", MS), ("10 ms", 10 * MS), ("2s", 2 * 10**9),
                                          ("250us", 250_000), ("7ns", 7), ("1.5ms", 1_500_000)])
    def test_durations(self, text, ns):
        assert parse_duration(text) == ns
        assert parse_duration(format_duration(ns)) == ns

    @pytest.mark.parametrize("text", ["10", "ms", "1 hour", "-1ms", "0.5ns"])
    def test_bad_durations(self, text):
        with pytest.raises(ConfigError):
            parse_duration(text)

    def test_file_round_trip(self):
        cfg = ToolConfig().with_value("interval", "1ms").with_value("scopes", "function,loop") \
            .with_value("loop_mode", "per_iteration").with_value("exclude", "_*,test_*")
        assert ToolConfig.from_text(cfg.to_text()) == cfg

    def test_unknown_key(self, capfd, caplog):
        code, _, _ = run(capfd, "config", "colour", "blue")
        assert code == 2 and "unknown config key" in caplog.text

    def test_set_then_info(self, capfd):
        assert run(capfd, "config", "interval", "1ms")[0] == 0
        assert load_config().interval_ns == MS
        code, out, _ = run(capfd, "info")
        assert code == 0 and "interval = 1 ms" in out

    def test_show_all(self, capfd):
        code, out, _ = run(capfd, "config")
        assert code == 0 and "interval = 10ms" in out and "accuracy_threshold = " in out


class TestAnalyze:
    def test_three_rows(self, tmp_path, capfd):
        p = tmp_path / "three.py"
        p.write_text("def a():\n    pass\n\ndef b():\n    pass\n\ndef c():\n    pass\n")
        code, out, _ = run(capfd, "analyze", str(p))
        rows = [ln for ln in out.splitlines() if ln.startswith("  function")]
        assert code == 0 and len(rows) == 3
        assert rows[0].split()[-1] == "1-2"

    def test_directory_walk(self, tmp_path, capfd):
        (tmp_path / "pkg" / "sub").mkdir(parents=True)
        (tmp_path / "pkg" / "a.py").write_text("def f():\n    pass\n")
        (tmp_path / "pkg" / "sub" / "b.c").write_text("int g(void) { return 1; }\n")
        (tmp_path / "pkg" / "notes.txt").write_text("ignored\n")
        code, out, _ = run(capfd, "analyze", str(tmp_path / "pkg"))
        sections = [ln for ln in out.splitlines() if ln.startswith("== ")]
        assert code == 0 and len(sections) == 2

    def test_unparseable_still_exits_zero(self, tmp_path, capfd):
        (tmp_path / "bad.py").write_text("def broken(:\n")
        (tmp_path / "good.py").write_text("def fine():\n    pass\n")
        code, out, _ = run(capfd, "analyze", str(tmp_path))
        assert code == 0 and "error" in out and "fine" in out

    def test_never_mutates(self, tmp_path, capfd):
        p = tmp_path / "keep.py"
        p.write_text("def f():\n    pass\n")
        run(capfd, "analyze", str(p))
        assert p.read_text() == "def f():\n    pass\n"
        assert sorted(x.name for x in tmp_path.iterdir()) == ["keep.py"]

    def test_missing_path(self, tmp_path, capfd):
        assert run(capfd, "analyze", str(tmp_path / "nope"))[0] == 2


class TestMeasure:
    def test_interval_flag_recorded(self, tmp_path, capfd):
        code, _, _ = run(capfd, "measure", str(SCRIPTS / "busy.py"), "1", "--interval", "1ms",
                         "--out", str(tmp_path))
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert code == 0 and manifest["sampling"]["interval_ns"] == MS

    def test_json_output_validates(self, tmp_path, capfd):
        code, out, _ = run(capfd, "measure", str(SCRIPTS / "busy.py"), "1", "--output", "json",
                           "--out", str(tmp_path), "--report", str(tmp_path / "r.json"))
        report = json.loads(out)
        jsonschema.validate(report, report_schema())
        assert json.loads((tmp_path / "r.json").read_text()) == report
        assert report["run_id"] == json.loads((tmp_path / "manifest.json").read_text())["run_id"]

    def test_text_table(self, tmp_path, capfd):
        code, out, _ = run(capfd, "measure", str(SCRIPTS / "busy.py"), "--out", str(tmp_path))
        assert code == 0 and "work" in out and "__process__" in out

    @pytest.mark.parametrize("status", [0, 1, 2, 42, 127, 128, 200, 255])
    def test_exit_code_passthrough(self, tmp_path, capfd, status):
        code, _, _ = run(capfd, "measure", str(SCRIPTS / "exit_with.py"), str(status),
                         "--out", str(tmp_path))
        assert code == status

    def test_missing_script(self, tmp_path, capfd):
        assert run(capfd, "measure", str(tmp_path / "absent.py"))[0] == 2

    def test_unsupported_language(self, tmp_path, capfd):
        p = tmp_path / "x.rb"
        p.write_text("puts 1\n")
        assert run(capfd, "measure", str(p))[0] == 2

    def test_bare_number_interval_rejected(self, capfd):
        with pytest.raises(SystemExit) as info:
            cli.main(["measure", str(SCRIPTS / "busy.py"), "--interval", "10"])
        assert info.value.code == 2

    def test_busy_region_energy_and_clock_anchor(self, tmp_path):
        result = measure(SCRIPTS / "busy.py", ["3"], ToolConfig(), out_dir=tmp_path, include_series=True)
        assert result.exit_code == 0
        assert_report_consistent(result, ToolConfig().interval_ns)
        assert abs(result.manifest.clock_offset_ns) <= SAME_CLOCK_TOLERANCE_NS
        work = next(r for r in result.report["regions"][0]["children"] if r["function"] == "work")
        oracle = 10 * work["duration_ns"] / 1000
        assert work["total_energy_uj"] == pytest.approx(oracle, rel=0.10)
        assert 0.05 < work["total_energy_uj"] / 1e6 < 20
        # regions sit inside the sampled window
        samples = next(iter(result.report["series"].values()))["samples"]
        assert samples[0][0] - 10 * MS <= work["t_begin_ns"] and work["t_end_ns"] <= samples[-1][0] + 10 * MS

    def test_json_determinism(self, tmp_path):
        reports = []
        for i in range(2):
            r = measure(SCRIPTS / "recurse.py", (), ToolConfig(), run_id="fixed", out_dir=tmp_path / str(i),
                        include_series=True)
            assert_report_consistent(r, ToolConfig().interval_ns)
            r.report.pop("series")
            reports.append(shape(r.report))
        assert reports[0] == reports[1]
        assert reports[0]["run_id"] == "fixed"

    def test_baseline_fills_raw_overhead(self, tmp_path):
        r = measure(SCRIPTS / "busy.py", ["1"], ToolConfig(), out_dir=tmp_path, baseline=True,
                    include_series=True)
        assert r.report["overhead"]["raw_pct"] is not None
        assert_report_consistent(r, ToolConfig().interval_ns)


class TestBenchmark:
    def test_zero_duration_rejected(self, capfd):
        with pytest.raises(SystemExit) as info:
            cli.main(["benchmark", "--duration", "0s"])
        assert info.value.code == 2

    def test_one_second_at_ten_watts(self, capfd):
        code, out, _ = run(capfd, "benchmark", "--duration", "1s", "--output", "json")
        data = json.loads(out)["runs"][0]
        assert code == 0
        assert data["power_w"] == pytest.approx(10.0, rel=0.01)
        assert data["energy_j"] == pytest.approx(10.0 * data["elapsed_s"], rel=0.01)
        assert data["energy_j"] == pytest.approx(10.0, rel=0.05)

    def test_repeat_has_ci_column(self, capfd):
        code, out, _ = run(capfd, "benchmark", "--duration", "50ms", "--repeat", "5")
        assert code == 0 and "95% CI" in out
        assert out.count("[") == 3

    def test_repeat_validated(self, capfd):
        with pytest.raises(SystemExit):
            cli.main(["benchmark", "--duration", "1ms", "--repeat", "0"])


class TestSensors:
    def test_info_minimal_host(self, capfd):
        code, out, _ = run(capfd, "info")
        assert code == 0 and "providers: 1" in out and "synthetic" in out

    def test_info_fixture_tree_shows_wrap(self, capfd):
        code, out, _ = run(capfd, "info", "--powercap-root", str(POWERCAP))
        assert code == 0 and "262143328850" in out and "65712999613" in out

    def test_doctor_passes_minimal(self, capfd):
        code, out, _ = run(capfd, "doctor")
        assert code == 0 and "[FAIL]" not in out
        assert "sampling self-test" in out and "checkpoint dir writable" in out and "adequacy" in out

    def test_doctor_fails_on_unreadable_energy(self, tmp_path, capfd, monkeypatch):
        tree = tmp_path / "powercap"
        shutil.copytree(POWERCAP, tree)
        bad = tree / "intel-rapl:0" / "intel-rapl:0:0" / "energy_uj"
        real = pv._read_sysfs

        def guarded(path):
            if os.fspath(path) == os.fspath(bad):
                raise PermissionError(13, "Permission denied", str(path))
            return real(path)

        monkeypatch.setattr(pv, "_read_sysfs", guarded)
        code, out, _ = run(capfd, "doctor", "--powercap-root", str(tree))
        assert code == 1
        fail = [ln for ln in out.splitlines() if ln.startswith("[FAIL]")]
        assert fail and str(bad) in fail[0]
        assert "chmod" in out and "udev" in out

    def test_doctor_flags_aliasing(self, capfd):
        code, out, _ = run(capfd, "doctor", "--interval", "15s")
        fail = [ln for ln in out.splitlines() if ln.startswith("[FAIL]")]
        assert code == 1 and len(fail) == 1 and "adequacy" in fail[0] and "alias" in fail[0]

    def test_init_sensors(self, capfd):
        code, out, _ = run(capfd, "init-sensors", "--powercap-root", str(POWERCAP))
        saved = json.loads((cli.config_dir() / cli.SENSORS_FILE).read_text())
        kinds = [p["kind"] for p in saved["providers"]]
        assert code == 0 and kinds == ["rapl_sysfs", "synthetic"]
        descs = [pv.ProviderDescriptor.from_dict(p) for p in saved["providers"]]
        assert len(descs[0].domains) == 2


class TestCalibrate:
    def test_cache_written_and_used(self, capfd, monkeypatch):
        from codegreen import measure as m
        calls = []

        def fake(runtime_id, counts, reps, runner=None, native_runner=None):
            from codegreen.correlator import calibrate
            calls.append(list(counts))
            return calibrate(runtime_id, counts, reps, runner=lambda n: 1_000_000 + 50 * n)

        monkeypatch.setattr(cli, "calibrate", fake)
        code, out, _ = run(capfd, "config", "calibrate", "python", "--repetitions", "3")
        assert code == 0 and calls == [list(cli.DEFAULT_CAL_COUNTS)]
        model = m.load_calibration("python")
        assert model.t_checkpoint_ns == pytest.approx(50)

    def test_missing_language_argument(self, capfd):
        assert run(capfd, "config", "calibrate")[0] == 2
