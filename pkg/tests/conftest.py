import numpy as np
import pytest

from sersml.dataset import SyntheticSpec, generate_synthetic_dataset


def separable_spec(**kw) -> SyntheticSpec:
    """Noise-free five-class set on a coarse grid (201 points)."""
    base = dict(spacing=7.0, baseline=True, tilt_std=0.05)
    base.update(kw)
    return SyntheticSpec(**base)


@pytest.fixture(scope="session")
def synthetic():
    return generate_synthetic_dataset(separable_spec(), seed=3)


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_synthetic_dataset(separable_spec(spacing=14.0, n_per_class=6), seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary -------------------------------------------------

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA.append((mark.args[0], rep.passed, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, secs in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({secs:.1f} s)")
