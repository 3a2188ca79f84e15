import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("lidal", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lidal")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# ------------------------------------------------------------ acceptance reporting
#
# Tests marked ``@pytest.mark.criterion(n)`` feed a per-criterion verdict that is
# printed at the end of the session, one line per criterion, together with any
# measurements the tests recorded through the ``measured`` fixture.

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number): acceptance criterion checked by a test")
    config.criterion_outcomes = {}
    config.criterion_notes = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    outcomes = item.config.criterion_outcomes.setdefault(marker.args[0], {})
    if report.failed or report.skipped:
        outcomes[item.nodeid] = False
    elif report.when == "call":
        outcomes.setdefault(item.nodeid, True)


@pytest.fixture
def measured(request):
    marker = request.node.get_closest_marker("criterion")
    notes = request.config.criterion_notes.setdefault(marker.args[0], [])
    return notes.append


def pytest_terminal_summary(terminalreporter, config):
    outcomes = config.criterion_outcomes
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        verdict = "PASS" if all(outcomes[number].values()) else "FAIL"
        notes = "; ".join(config.criterion_notes.get(number, []))
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {notes}".rstrip())
