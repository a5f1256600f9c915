import os
import sys
from collections import defaultdict

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA = defaultdict(list)
_SETUP_SECONDS = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, title): test is part of a numbered acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "setup" and rep.passed:
        # module fixtures do the heavy lifting for some criteria
        _SETUP_SECONDS[item.nodeid] = rep.duration
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            status = "xfail"
        elif rep.skipped:
            status = "skipped"
        else:
            status = rep.outcome
        seconds = rep.duration + _SETUP_SECONDS.pop(item.nodeid, 0.0)
        _CRITERIA[(number, title)].append((item.name, status, seconds))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for (number, title), results in sorted(_CRITERIA.items()):
        ok = all(status == "passed" for _, status, _ in results)
        seconds = sum(d for _, _, d in results)
        notes = ", ".join(f"{name}: {status}" for name, status, _ in results if status != "passed")
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}  ({seconds:.1f} s)"
        tr.write_line(line + (f"  [{notes}]" if notes else ""))
