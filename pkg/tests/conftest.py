import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from hgptrack.harness import config as C
from hgptrack.harness.experiment import train_bank
from hgptrack.harness.scenario import synthetic_suite


@pytest.fixture(scope="session")
def small_training():
    """A bank grown on a handful of short synthetic trips."""
    trips = synthetic_suite(4, C.derive_seed(99, C.STREAM_TRAIN_TRIPS), duration=20.0, prefix="tr")
    return train_bank(trips, C.BankParams(c_size=8), seed=99)


@pytest.fixture(scope="session")
def small_bank(small_training):
    return small_training.reduced


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion after the run

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        summary = dict(item.user_properties).get("summary", "")
        _ACCEPTANCE.append((mark.args[0], "PASS" if report.passed else "FAIL", summary))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict, summary in _ACCEPTANCE:
        terminalreporter.write_line(f"{verdict} {name}: {summary}")
