"""Shared pytest configuration: acceptance-summary reporting.

Tests marked with @pytest.mark.criterion(n, "label") get one PASS/FAIL
line each in a dedicated terminal section after the run, with any
"detail" recorded through record_property appended.
"""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(num, label): numbered entry in the acceptance summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, label = mark.args
    if rep.when == "call":
        detail = dict(rep.user_properties).get("detail", "")
        _RESULTS[num] = ("PASS" if rep.passed else "FAIL", label, detail)
    elif rep.when == "setup" and not rep.passed:
        _RESULTS[num] = ("SKIP" if rep.skipped else "FAIL", label, "")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        status, label, detail = _RESULTS[num]
        line = f"[{num:2d}/10] {status} {label}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)
