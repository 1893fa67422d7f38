import numpy as np
import pytest

from mapreid import kernels

_acceptance = []

IMPLS = [pytest.param(kernels.numpy_impl, id="numpy")]
if kernels.numba_impl is not None:
    IMPLS.append(pytest.param(kernels.numba_impl, id="numba"))


@pytest.fixture(params=IMPLS)
def impl(request):
    """Each kernel implementation in turn."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def detail(request):
    """Attach a measured-value note to the acceptance summary line."""
    def note(text):
        request.node.user_properties.append(("detail", text))
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.get_closest_marker("acceptance") is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        notes = "; ".join(v for k, v in item.user_properties if k == "detail")
        _acceptance.append((item.name, rep.outcome, notes, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, notes, dur in _acceptance:
        flag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{flag}  {name}  ({dur:.1f}s)  {notes}")
