from __future__ import annotations

import pytest

_RESULTS: dict[str, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one acceptance criterion")


@pytest.fixture
def detail(request):
    """Free-text measurement summary shown next to the criterion's pass/fail line."""
    notes: list[str] = []
    request.node.user_properties.append(("detail", notes))
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and not (rep.when == "setup" and not rep.passed)):
        return
    number, title = mark.args
    notes = next((v for k, v in item.user_properties if k == "detail"), [])
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    _RESULTS[str(number)] = (status, title, "; ".join(notes))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS, key=int):
        status, title, notes = _RESULTS[number]
        line = f"[{status}] {number}. {title}"
        terminalreporter.write_line(line + (f" -- {notes}" if notes else ""))
