import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mkthe.bgv import kgen, setup
from mkthe.params import get_preset

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy():
    return get_preset("toy").params


@pytest.fixture(scope="session")
def toy_tally():
    return get_preset("toy-tally").params


@pytest.fixture(scope="session")
def toy_keys(toy):
    rng = np.random.default_rng(11)
    pp = setup(toy, rng)
    sk, pk = kgen(pp, rng)
    return pp, sk, pk


@pytest.fixture(scope="session")
def tally_keys(toy_tally):
    rng = np.random.default_rng(12)
    pp = setup(toy_tally, rng)
    sk, pk = kgen(pp, rng)
    return pp, sk, pk


# -- acceptance summary: one pass/fail line per criterion ---------------------

_CRITERIA: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    ok = rep.passed and rep.when == "call"
    prev = _CRITERIA.get(number)
    _CRITERIA[number] = (title, ok and (prev is None or prev[1]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}")
