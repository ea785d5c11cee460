import numpy as np
import pytest

from helpers import DATA


@pytest.fixture
def fixture_csv():
    return DATA / "fixture3.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        callspec = getattr(item, "callspec", None)
        suffix = f" [{callspec.id}]" if callspec else ""
        _CRITERIA.append((status, marker.args[0] + suffix))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in _CRITERIA:
        terminalreporter.write_line(f"{status}  {name}")
