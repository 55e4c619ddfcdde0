"""Closed-form Black-Scholes values used as a reference for the solvers."""

from typing import Literal

import numpy as np
from scipy.stats import norm

__all__ = ["black_scholes", "black_scholes_delta"]


def _d1_d2(s, strike, maturity, rate, sigma, dividend_yield):
    s = np.asarray(s, dtype=float)
    vol = sigma * np.sqrt(maturity)
    drift = rate - dividend_yield + 0.5 * sigma**2
    d1 = (np.log(s / strike) + drift * maturity) / vol
    return d1, d1 - vol


def black_scholes(
    s,
    strike: float,
    maturity: float,
    rate: float,
    sigma: float,
    dividend_yield: float = 0.0,
    kind: Literal["call", "put"] = "call",
) -> np.ndarray:
    """Black-Scholes value of a European call or put

    Parameters
    ----------
    s : float | np.ndarray
        Spot price
    strike : float
        Strike
    maturity : float
        Time to maturity in years
    rate : float
        Continuously compounded interest rate
    sigma : float
        Lognormal volatility
    dividend_yield : float, optional
        Continuous dividend yield, by default 0
    kind : {"call", "put"}, optional
        Option type, by default "call"
    """
    if kind not in ("call", "put"):
        raise ValueError(f"Unknown option type '{kind}'.")
    s = np.asarray(s, dtype=float)
    if maturity <= 0:
        intrinsic = s - strike if kind == "call" else strike - s
        return np.maximum(intrinsic, 0.0)
    d1, d2 = _d1_d2(s, strike, maturity, rate, sigma, dividend_yield)
    carry = np.exp(-dividend_yield * maturity)
    discount = np.exp(-rate * maturity)
    if kind == "call":
        return s * carry * norm.cdf(d1) - strike * discount * norm.cdf(d2)
    return strike * discount * norm.cdf(-d2) - s * carry * norm.cdf(-d1)


def black_scholes_delta(
    s,
    strike: float,
    maturity: float,
    rate: float,
    sigma: float,
    dividend_yield: float = 0.0,
    kind: Literal["call", "put"] = "call",
) -> np.ndarray:
    """Derivative of :func:`black_scholes` with respect to the spot."""
    s = np.asarray(s, dtype=float)
    if maturity <= 0:
        itm = s > strike if kind == "call" else s < strike
        return np.where(itm, 1.0 if kind == "call" else -1.0, 0.0)
    d1, _ = _d1_d2(s, strike, maturity, rate, sigma, dividend_yield)
    carry = np.exp(-dividend_yield * maturity)
    if kind == "call":
        return carry * norm.cdf(d1)
    return carry * (norm.cdf(d1) - 1.0)
