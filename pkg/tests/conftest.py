"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_outcomes = {}


def _criterion(item):
    mark = item.get_closest_marker("criterion")
    return (mark.args[0], mark.args[1]) if mark else None


def pytest_collection_modifyitems(items):
    for item in items:
        key = _criterion(item)
        if key:
            _outcomes.setdefault(key, [])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    key = _criterion(item)
    if key and (rep.when == "call" or rep.failed or rep.skipped):
        _outcomes[key].append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (n, title), results in sorted(_outcomes.items()):
        if not results:
            status = "NOT RUN"
        elif all(o == "passed" for _, o in results):
            status = "PASS"
        else:
            status = "FAIL"
        failed = [name for name, o in results if o != "passed"]
        extra = f" (failing: {', '.join(failed)})" if failed and results else ""
        terminalreporter.write_line(f"criterion {n:>2} {status:<7} {title}{extra}")
