import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from emevlab import kernels

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


# acceptance reporting: tests marked criterion(n) roll up into one line per n

_RESULTS = pytest.StashKey[dict]()
_DETAIL = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.stash[_RESULTS] = {}


@pytest.fixture
def note(request):
    """Attach a measured value to the acceptance summary line."""
    details = request.node.stash.setdefault(_DETAIL, [])
    return details.append


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None and (report.when == "call" or report.failed):
        ok, details = item.config.stash[_RESULTS].get(marker.args[0], (True, []))
        details = details + item.stash.get(_DETAIL, [])
        item.stash[_DETAIL] = []
        item.config.stash[_RESULTS][marker.args[0]] = (ok and report.passed, details)
    return report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, details = results[number]
        text = "; ".join(details)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}"
                                    + (f": {text}" if text else ""))
