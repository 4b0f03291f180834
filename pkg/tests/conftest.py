import numpy as np
import pytest

from mortdrift.leecarter import fit_lee_carter
from mortdrift.synthetic import reference_portfolio, synthetic_surface
from mortdrift.trend import fit_trend


@pytest.fixture(scope="session")
def ref_surface():
    return synthetic_surface()


@pytest.fixture(scope="session")
def ref_fit(ref_surface):
    params = fit_lee_carter(ref_surface)
    return params, fit_trend(params.kappa, params.years)


@pytest.fixture(scope="session")
def ref_portfolio():
    return reference_portfolio()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from builders import ACCEPTANCE_LOG

    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)
