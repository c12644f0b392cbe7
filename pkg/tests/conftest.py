from __future__ import annotations

import pytest

_criterion_results: list[tuple[int, str, bool]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, description): acceptance criterion this test implements"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker:
        _criterion_results.append((marker.args[0], marker.args[1], report.passed))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_results:
        return
    terminalreporter.section("acceptance criteria")
    for num, description, passed in sorted(_criterion_results):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {num}: {description}")
