import os
from collections import defaultdict

import pytest

_outcomes = defaultdict(list)
_titles = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.fixture(autouse=True)
def _isolated_config(tmp_path_factory, monkeypatch):
    """Keep every test away from the real user config and powercap tree."""
    monkeypatch.setenv("CODEGREEN_CONFIG_DIR", str(tmp_path_factory.mktemp("cfg")))
    monkeypatch.setenv("CODEGREEN_POWERCAP_ROOT", str(tmp_path_factory.mktemp("no-powercap") / "absent"))
    monkeypatch.delenv("CODEGREEN_CHECKPOINT_DIR", raising=False)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    _titles[number] = title
    if rep.when == "call" or (rep.when == "setup" and (rep.failed or rep.skipped)):
        _outcomes[number].append((item.name, rep.outcome, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_outcomes):
        results = _outcomes[number]
        failed = [n for n, o, _ in results if o == "failed"]
        passed = [n for n, o, _ in results if o == "passed"]
        skipped = [n for n, o, _ in results if o == "skipped"]
        verdict = "FAIL" if failed else ("PASS" if passed else "SKIP")
        secs = sum(d for _, _, d in results)
        extra = f" ({len(skipped)} skipped)" if skipped and passed else ""
        tr.write_line(f"[{verdict}] {number:>2}. {_titles[number]}  ({secs:.2f}s){extra}")
