"""Collects acceptance-criterion outcomes and prints one line per criterion."""

from __future__ import annotations

_titles = {}
_items = {}
_outcomes = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            number, title = m.args
            _titles[number] = title
            _items[item.nodeid] = number


def pytest_runtest_logreport(report):
    number = _items.get(report.nodeid)
    if number is None:
        return
    _outcomes.setdefault(number, True)
    if report.failed or (report.when == "call" and report.skipped):
        _outcomes[number] = False
    elif report.when == "setup" and report.skipped:
        _outcomes[number] = False


def pytest_terminal_summary(terminalreporter):
    if not _titles:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_titles):
        seen = number in _outcomes
        status = "PASS" if seen and _outcomes[number] else "FAIL" if seen else "NOT RUN"
        terminalreporter.write_line(f"{status}  criterion {number}: {_titles[number]}")
