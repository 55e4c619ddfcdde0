import numpy as np
import pytest

from fairrange.analytic import black_scholes, black_scholes_delta


@pytest.mark.parametrize(
    "kind, expected", [("call", 10.450583572185565), ("put", 5.573526022256971)]
)
def test_black_scholes_value(kind, expected):
    """Test the textbook at-the-money values."""
    assert black_scholes(100.0, 100.0, 1.0, 0.05, 0.2, kind=kind) == pytest.approx(
        expected, rel=1e-10
    )


def test_put_call_parity():
    """Test put-call parity with a dividend yield."""
    s = np.linspace(50, 150, 11)

    call = black_scholes(s, 100.0, 0.5, 0.03, 0.25, dividend_yield=0.01)
    put = black_scholes(s, 100.0, 0.5, 0.03, 0.25, dividend_yield=0.01, kind="put")

    np.testing.assert_allclose(
        call - put, s * np.exp(-0.01 * 0.5) - 100.0 * np.exp(-0.03 * 0.5)
    )


def test_delta_matches_finite_difference():
    """Test the delta against a central difference of the value."""
    h = 1e-4
    for kind in ("call", "put"):
        bump = black_scholes(100.0 + h, 100.0, 1.0, 0.05, 0.2, kind=kind)
        dip = black_scholes(100.0 - h, 100.0, 1.0, 0.05, 0.2, kind=kind)
        delta = black_scholes_delta(100.0, 100.0, 1.0, 0.05, 0.2, kind=kind)
        assert delta == pytest.approx((bump - dip) / (2 * h), abs=1e-6)


def test_expired():
    """Test the intrinsic value and delta at maturity."""
    s = np.array([90.0, 110.0])

    np.testing.assert_array_equal(black_scholes(s, 100.0, 0.0, 0.05, 0.2), [0, 10])
    np.testing.assert_array_equal(
        black_scholes(s, 100.0, 0.0, 0.05, 0.2, kind="put"), [10, 0]
    )
    np.testing.assert_array_equal(black_scholes_delta(s, 100.0, 0.0, 0.05, 0.2), [0, 1])


def test_unknown_kind():
    """Test an unknown option type is rejected."""
    with pytest.raises(ValueError, match="Unknown option type"):
        black_scholes(100.0, 100.0, 1.0, 0.05, 0.2, kind="digital")
