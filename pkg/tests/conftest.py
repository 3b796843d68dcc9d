import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_criteria = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    label = dict(item.user_properties).get("criterion")
    if label is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        entry = _criteria.setdefault(label, [])
        entry.append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")

    def key(label):
        num = label.split()[0]
        digits = "".join(ch for ch in num if ch.isdigit())
        return (int(digits or 0), num)

    for label in sorted(_criteria, key=key):
        results = _criteria[label]
        ok = all(outcome == "passed" for _, outcome in results)
        failed = [name for name, outcome in results if outcome != "passed"]
        suffix = "" if ok else f"  (failing: {', '.join(failed)})"
        tr.write_line(f"criterion {label}: {'PASS' if ok else 'FAIL'}{suffix}")
