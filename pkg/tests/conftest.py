import numpy as np
import pytest

from recconv.rng import SplitMix64


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand(seed, *shape, scale=1.0):
    return SplitMix64(seed).symmetric(shape, scale)


# --- acceptance summary: one line per criterion ----------------------------------

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    prev = _ACCEPTANCE.get(number, (title, True, 0.0))
    passed = prev[1] and not rep.failed
    _ACCEPTANCE[number] = (title, passed, prev[2] + (rep.duration if rep.when == "call" else 0.0))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, seconds = _ACCEPTANCE[number]
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}  ({seconds:.2f} s)")
