import pytest

from fairrange.market import AssetModel, ContractSpec, Form, RateModel
from fairrange.pde import Grid, solve_counterparty_pde, solve_hedger_pde


@pytest.fixture(scope="session")
def equal_rates():
    """Return lending and borrowing rates of 5%."""
    return RateModel.constant(0.05, 0.05)


@pytest.fixture(scope="session")
def split_rates():
    """Return a 2% lending rate and a 5% borrowing rate."""
    return RateModel.constant(0.02, 0.05)


@pytest.fixture(scope="session")
def asset():
    """Return a lognormal asset with 5% drift and 20% volatility."""
    return AssetModel(mu=Form("proportional", 0.05), sigma=Form("lognormal", 0.2))


@pytest.fixture(scope="session")
def call():
    """Return an at-the-money one-year call."""
    return ContractSpec.call(100.0, 1.0)


@pytest.fixture(scope="session")
def put():
    """Return an at-the-money one-year put."""
    return ContractSpec.put(100.0, 1.0)


@pytest.fixture(scope="session")
def grid():
    """Return a grid with unit price steps on [10, 400]."""
    return Grid(s_min=10.0, s_max=400.0, n_space=391, n_time=400, maturity=1.0)


@pytest.fixture(scope="session")
def split_surfaces(split_rates, asset, call, grid):
    """Return hedger and counterparty call surfaces at zero endowment."""
    hedger = solve_hedger_pde(split_rates, asset, call, 0.0, grid)
    counterparty = solve_counterparty_pde(split_rates, asset, call, 0.0, grid)
    return hedger, counterparty
