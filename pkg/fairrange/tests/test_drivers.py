import numpy as np
import pytest

from fairrange.drivers import (
    DriverInput,
    active_rate,
    cash_position,
    delta_mixed_sign,
    delta_same_sign,
    driver_gap,
    g_borrowing,
    g_core,
    g_counterparty,
    g_hedger,
    g_lending,
    lipschitz_bound,
)
from fairrange.market import AssetModel, Form


@pytest.fixture
def samples():
    """Return 10 000 random driver arguments."""
    rng = np.random.default_rng(42)
    n = 10_000
    return {
        "t": rng.uniform(0, 1, n),
        "s": rng.uniform(1, 300, n),
        "y": rng.normal(0, 50, n),
        "z": rng.normal(0, 2, n),
        "x": rng.uniform(0, 200, n),
    }


@pytest.mark.parametrize("driver", [g_lending, g_borrowing])
def test_discounted_drivers_vanish_at_equal_rates(driver, equal_rates, samples):
    """Test both discounted drivers vanish when the rates coincide."""
    inp = DriverInput(samples["t"], 0.0, samples["s"], samples["y"], samples["z"])

    result = driver(equal_rates, inp)

    scale = np.abs(samples["y"]) + np.abs(samples["z"] * samples["s"])
    assert np.all(np.abs(result) <= 1e-12 * scale * 0.05 + 1e-14)


@pytest.mark.parametrize(
    "driver, y, z, expected",
    [
        (g_lending, 10.0, 0.0, 0.0),
        (g_lending, 0.0, 1.0, -3.0),
        (g_borrowing, 1.0, 0.0, -0.03),
        (g_borrowing, 100.0, 1.0, 0.0),
    ],
)
def test_discounted_drivers_values(driver, y, z, expected, split_rates):
    """Test the discounted drivers on both funding branches."""
    inp = DriverInput(t=0.0, x=0.0, s=100.0, y=y, z=z)

    assert driver(split_rates, inp) == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize(
    "y, z, s, expected",
    [
        (100.0, 1.0, 100.0, 0.0),
        (50.0, 0.0, 100.0, 1.0),
        (50.0, 1.0, 100.0, -2.5),
    ],
)
def test_g_core(y, z, s, expected, split_rates):
    """Test the funding cost of the cash balance."""
    assert g_core(split_rates, 0.0, y, z, s) == pytest.approx(expected)


def test_active_rate(split_rates):
    """Test balances are lent at r_l and borrowed at r_b."""
    np.testing.assert_array_equal(
        active_rate(split_rates, 0.0, np.array([1.0, 0.0, -1.0])), [0.02, 0.02, 0.05]
    )


def test_hedger_linear_at_equal_rates(equal_rates, samples):
    """Test the hedger's driver collapses to r y at equal rates."""
    asset = AssetModel()

    result = g_hedger(
        equal_rates, asset, samples["t"], 0.0, samples["s"], samples["y"], samples["z"]
    )

    np.testing.assert_allclose(result, 0.05 * samples["y"], atol=1e-10)


def test_counterparty_linear_at_equal_rates(equal_rates, samples):
    """Test the counterparty's driver collapses to r y at equal rates."""
    asset = AssetModel()

    result = g_counterparty(
        equal_rates, asset, samples["t"], 0.0, samples["s"], samples["y"], samples["z"]
    )

    np.testing.assert_allclose(result, 0.05 * samples["y"], atol=1e-10)


@pytest.mark.parametrize(
    "driver, x, y, expected",
    [
        (g_hedger, 0.0, 1.0, 0.02),
        (g_hedger, 100.0, 0.0, 0.0),
        (g_counterparty, 0.0, 1.0, 0.05),
        (g_counterparty, 50.0, 0.0, 0.0),
    ],
)
def test_party_drivers_values(driver, x, y, expected, split_rates):
    """Test the party drivers at zero hedge ratio."""
    asset = AssetModel()

    result = driver(split_rates, asset, 0.0, x, 100.0, y, 0.0)

    assert result == pytest.approx(expected, abs=1e-14)


def test_hedger_negative_endowment(split_rates):
    """Test a negative endowment is carried in the borrowing account."""
    asset = AssetModel()

    result = g_hedger(split_rates, asset, 0.5, -100.0, 100.0, 0.0, 0.0)

    # interest on the debt offsets the endowment term
    assert result == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("driver", [g_hedger, g_counterparty])
def test_signed_zero_endowment(driver, split_rates, samples):
    """Test a zero endowment of either sign drops out of the driver."""
    asset = AssetModel(mu=Form("proportional", 0.05), sigma=Form("lognormal", 0.2))
    t, s, y, z = samples["t"], samples["s"], samples["y"], samples["z"]

    positive = driver(split_rates, asset, t, 0.0, s, y, z)
    negative = driver(split_rates, asset, t, -0.0, s, y, z)

    np.testing.assert_array_equal(positive, negative)
    spread = asset.funding_spread(split_rates, t, s)
    if driver is g_hedger:
        expected = z * spread * s + g_core(split_rates, t, y, z, s)
    else:
        expected = z * spread * s - g_core(split_rates, t, -y, -z, s)
    np.testing.assert_allclose(positive, expected, rtol=1e-12, atol=1e-12)


def test_hedger_funding_spread(split_rates):
    """Test the funding spread term z beta s."""
    asset = AssetModel(beta=Form("constant", 0.07))

    # cash y - z s = 0 earns nothing, only the spread term remains
    result = g_hedger(split_rates, asset, 0.0, 0.0, 100.0, 100.0, 1.0)

    assert result == pytest.approx(7.0)


def test_cash_position(split_rates):
    """Test the cash balance of each party."""
    assert cash_position("hedger", split_rates, 0.0, 10.0, 100.0, 5.0, 0.5) == (
        pytest.approx(-35.0)
    )
    assert cash_position("counterparty", split_rates, 0.0, 10.0, 100.0, 5.0, 0.5) == (
        pytest.approx(55.0)
    )

    with pytest.raises(ValueError, match="Unknown party"):
        cash_position("dealer", split_rates, 0.0, 0.0, 100.0, 0.0, 0.0)


def test_delta_same_sign_equal_rates(equal_rates):
    """Test the gap vanishes at equal rates and zero endowments."""
    assert delta_same_sign(equal_rates, 0.3, 0.0, 0.0, 100.0, 4.0, 0.5) == (
        pytest.approx(0.0, abs=1e-12)
    )


def test_delta_same_sign_non_positive(split_rates, samples):
    """Test the gap is never positive for non-negative endowments."""
    rng = np.random.default_rng(7)
    x2 = rng.uniform(0, 200, samples["t"].size)

    delta = delta_same_sign(
        split_rates,
        samples["t"],
        samples["x"],
        x2,
        samples["s"],
        samples["y"],
        samples["z"],
    )

    assert np.all(delta <= 1e-12)


def test_delta_same_sign_borrow_non_positive(split_rates, samples):
    """Test the gap is never positive for non-positive endowments."""
    rng = np.random.default_rng(11)
    x2 = -rng.uniform(0, 200, samples["t"].size)

    delta = delta_same_sign(
        split_rates,
        samples["t"],
        -samples["x"],
        x2,
        samples["s"],
        samples["y"],
        samples["z"],
        account="borrow",
    )

    assert np.all(delta <= 1e-12)


def test_delta_same_sign_single_endowment(split_rates):
    """Test a single positive endowment at zero state."""
    delta = delta_same_sign(split_rates, 0.0, 1.0, 0.0, 100.0, 0.0, 0.0)

    assert delta <= 0


def test_delta_same_sign_sign_violation(split_rates):
    """Test endowments of the wrong sign are rejected."""
    with pytest.raises(ValueError, match="non-negative"):
        delta_same_sign(split_rates, 0.0, -1.0, 0.0, 100.0, 0.0, 0.0)

    with pytest.raises(ValueError, match="non-positive"):
        delta_same_sign(split_rates, 0.0, 1.0, 0.0, 100.0, 0.0, 0.0, account="borrow")

    with pytest.raises(ValueError, match="Unknown account"):
        delta_same_sign(split_rates, 0.0, 1.0, 0.0, 100.0, 0.0, 0.0, account="repo")


def test_delta_mixed_sign_zero(split_rates):
    """Test zero endowments give a zero bound."""
    delta, bound = delta_mixed_sign(split_rates, 0.0, 0.0, 0.0, 100.0, 3.0, 0.2)

    assert bound == 0.0
    assert delta <= 0.0


def test_delta_mixed_sign_bound(split_rates):
    """Test the bound of opposite unit endowments is positive."""
    _, bound = delta_mixed_sign(split_rates, 0.0, 1.0, -1.0, 100.0, 0.0, 0.0)

    assert bound == pytest.approx(0.03)


@pytest.mark.parametrize("side", ["x1", "x2"])
def test_delta_mixed_sign_property(side, split_rates, samples):
    """Test the gap stays below its bound and below zero with one zero endowment."""
    x1 = samples["x"] if side == "x1" else np.zeros_like(samples["x"])
    x2 = -samples["x"] if side == "x2" else np.zeros_like(samples["x"])

    delta, bound = delta_mixed_sign(
        split_rates, samples["t"], x1, x2, samples["s"], samples["y"], samples["z"]
    )

    assert np.all(delta <= bound + 1e-9)
    assert np.all(bound <= 0)
    assert np.all(delta <= 1e-9)


def test_delta_mixed_sign_bound_general(split_rates, samples):
    """Test the gap stays below its bound for nonzero endowments of opposite sign."""
    rng = np.random.default_rng(3)
    x2 = -rng.uniform(0, 200, samples["t"].size)

    delta, bound = delta_mixed_sign(
        split_rates,
        samples["t"],
        samples["x"],
        x2,
        samples["s"],
        samples["y"],
        samples["z"],
    )

    assert np.all(delta <= bound + 1e-9)


def test_delta_mixed_sign_violation(split_rates):
    """Test endowments of the wrong sign are rejected."""
    with pytest.raises(ValueError, match="x1 >= 0 and x2 <= 0"):
        delta_mixed_sign(split_rates, 0.0, -1.0, 0.0, 100.0, 0.0, 0.0)


def test_driver_gap_ordering(split_rates, samples):
    """Test the hedger's driver never exceeds the counterparty's."""
    asset = AssetModel()

    gap = driver_gap(
        split_rates,
        asset,
        samples["t"],
        0.0,
        0.0,
        samples["s"],
        samples["y"],
        samples["z"],
    )

    assert np.all(gap <= 1e-9)


@pytest.mark.parametrize(
    "kind, expected",
    [
        ("lending", (0.03, 12.0)),
        ("borrowing", (0.03, 12.0)),
        ("core", (0.05, 20.0)),
        ("hedger", (0.05, 12.0)),
    ],
)
def test_lipschitz_bound(kind, expected, split_rates):
    """Test the Lipschitz constants of each driver."""
    assert lipschitz_bound(split_rates, kind, 400.0) == pytest.approx(expected)


def test_lipschitz_bound_holds(split_rates, samples):
    """Test the core driver respects its Lipschitz constants."""
    l_y, l_z = lipschitz_bound(split_rates, "core", 300.0)
    rng = np.random.default_rng(5)
    dy = rng.normal(0, 10, samples["y"].size)
    dz = rng.normal(0, 1, samples["z"].size)

    change = np.abs(
        g_core(split_rates, 0.0, samples["y"] + dy, samples["z"] + dz, samples["s"])
        - g_core(split_rates, 0.0, samples["y"], samples["z"], samples["s"])
    )

    assert np.all(change <= l_y * np.abs(dy) + l_z * np.abs(dz) + 1e-9)


def test_lipschitz_bound_unknown(split_rates):
    """Test an unknown driver is rejected."""
    with pytest.raises(ValueError, match="Unknown driver"):
        lipschitz_bound(split_rates, "quadratic", 400.0)
