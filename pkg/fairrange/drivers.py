"""Drivers of the pricing equations under differential funding rates.

Every function is vectorised over numpy arrays; scalar inputs return 0-d arrays.
"""

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .market import AssetModel, RateModel, account_value

__all__ = [
    "DriverInput",
    "active_rate",
    "cash_position",
    "delta_mixed_sign",
    "delta_same_sign",
    "driver_gap",
    "endowment_account",
    "g_borrowing",
    "g_core",
    "g_counterparty",
    "g_hedger",
    "g_lending",
    "lipschitz_bound",
]


@dataclass(frozen=True)
class DriverInput:
    """Arguments of a driver

    Parameters
    ----------
    t : float | np.ndarray
        Time
    x : float | np.ndarray
        Endowment in cash
    s : float | np.ndarray
        Asset price
    y : float | np.ndarray
        Value state in cash
    z : float | np.ndarray
        Hedge ratio in units of the asset
    """

    t: float | np.ndarray
    x: float | np.ndarray
    s: float | np.ndarray
    y: float | np.ndarray
    z: float | np.ndarray


def _funding(rates: RateModel, t, q) -> np.ndarray:
    """``r_l q+ - r_b q-``"""
    return rates.r_l(t) * np.maximum(q, 0.0) - rates.r_b(t) * np.maximum(-q, 0.0)


def active_rate(rates: RateModel, t, q) -> np.ndarray:
    """Rate earned or paid on a cash balance ``q``."""
    return np.where(np.asarray(q) >= 0, rates.r_l(t), rates.r_b(t))


def g_core(rates: RateModel, t, y, z, s) -> np.ndarray:
    """``r_l (y - z s)+ - r_b (y - z s)-``"""
    return _funding(rates, t, np.asarray(y) - np.asarray(z) * np.asarray(s))


def _discounted(rates: RateModel, inp: DriverInput, which: str) -> np.ndarray:
    unit = account_value(rates, which, inp.t)
    rate = rates.r_l(inp.t) if which == "lend" else rates.r_b(inp.t)
    zs = np.asarray(inp.z) * np.asarray(inp.s)
    y = np.asarray(inp.y)
    return (
        rate * zs / unit
        + _funding(rates, inp.t, y * unit - zs) / unit
        - rate * y
    )


def g_lending(rates: RateModel, inp: DriverInput) -> np.ndarray:
    """Driver of the wealth discounted by the lending account

    ``r_l B_l^-1 z s + B_l^-1 (r_l (y B_l - z s)+ - r_b (y B_l - z s)-) - r_l y``.
    The endowment ``inp.x`` is not used.
    """
    return _discounted(rates, inp, "lend")


def g_borrowing(rates: RateModel, inp: DriverInput) -> np.ndarray:
    """Driver of the wealth discounted by the borrowing account

    ``r_b B_b^-1 z s + B_b^-1 (r_l (y B_b - z s)+ - r_b (y B_b - z s)-) - r_b y``.
    The endowment ``inp.x`` is not used.
    """
    return _discounted(rates, inp, "borrow")


def endowment_account(rates: RateModel, t, x) -> tuple[np.ndarray, np.ndarray]:
    """Rate and account value carrying the endowment ``x``

    Non-negative endowments sit in the lending account, negative ones in the
    borrowing account.
    """
    lend = np.asarray(x) >= 0
    rate = np.where(lend, rates.r_l(t), rates.r_b(t))
    unit = np.where(
        lend, account_value(rates, "lend", t), account_value(rates, "borrow", t)
    )
    return rate, unit


def g_hedger(rates: RateModel, asset: AssetModel, t, x, s, y, z) -> np.ndarray:
    """Hedger's driver ``z beta s - x r B + G(y + x B, z)``

    ``r`` and ``B`` belong to the lending account for ``x >= 0`` and to the
    borrowing account otherwise.
    """
    rate, unit = endowment_account(rates, t, x)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    s = np.asarray(s, dtype=float)
    spread = asset.funding_spread(rates, t, s)
    return z * spread * s - x * rate * unit + g_core(rates, t, y + x * unit, z, s)


def g_counterparty(rates: RateModel, asset: AssetModel, t, x, s, y, z) -> np.ndarray:
    """Counterparty's driver ``z beta s + x r B - G(-y + x B, -z)``"""
    rate, unit = endowment_account(rates, t, x)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    s = np.asarray(s, dtype=float)
    spread = asset.funding_spread(rates, t, s)
    return z * spread * s + x * rate * unit - g_core(rates, t, -y + x * unit, -z, s)


def cash_position(
    party: Literal["hedger", "counterparty"], rates: RateModel, t, x, s, y, z
) -> np.ndarray:
    """Cash balance financing the hedge of ``party``

    ``y + x B - z s`` for the hedger and ``-y + x B + z s`` for the counterparty,
    where ``y`` is the value state and ``z`` the hedge ratio of the respective
    driver. Positive balances are lent, negative ones borrowed.
    """
    _, unit = endowment_account(rates, t, x)
    zs = np.asarray(z) * np.asarray(s)
    x = np.asarray(x, dtype=float)
    match party:
        case "hedger":
            return np.asarray(y) + x * unit - zs
        case "counterparty":
            return -np.asarray(y) + x * unit + zs
    raise ValueError(f"Unknown party '{party}'. Use 'hedger' or 'counterparty'.")


def delta_same_sign(
    rates: RateModel,
    t,
    x1,
    x2,
    s,
    y,
    z,
    account: Literal["lend", "borrow"] = "lend",
) -> np.ndarray:
    """Gap between the discounted drivers of both parties

    ``G(t, y + x1, z) + G(t, -y + x2, -z)`` with ``G`` the lending-discounted
    driver for non-negative endowments (``account="lend"``) and the
    borrowing-discounted driver for non-positive ones (``account="borrow"``).
    The gap is never positive.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    match account:
        case "lend":
            if np.any(x1 < 0) or np.any(x2 < 0):
                raise ValueError("Lending-account endowments must be non-negative.")
            driver = g_lending
        case "borrow":
            if np.any(x1 > 0) or np.any(x2 > 0):
                raise ValueError("Borrowing-account endowments must be non-positive.")
            driver = g_borrowing
        case _:
            raise ValueError(f"Unknown account '{account}'.")
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    return driver(rates, DriverInput(t, x1, s, y + x1, z)) + driver(
        rates, DriverInput(t, x2, s, -y + x2, -z)
    )


def delta_mixed_sign(
    rates: RateModel, t, x1, x2, s, y, z
) -> tuple[np.ndarray, np.ndarray]:
    """Driver gap and its upper bound for ``x1 >= 0 >= x2``

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        ``delta`` and ``bound = min((r_l - r_b) x2 B_b, (r_b - r_l) x1 B_l)``;
        ``delta <= bound`` and the bound is non-positive when ``x1 x2 = 0``.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if np.any(x1 < 0) or np.any(x2 > 0):
        raise ValueError("Mixed-sign endowments need x1 >= 0 and x2 <= 0.")
    r_l, r_b = rates.r_l(t), rates.r_b(t)
    b_l = account_value(rates, "lend", t)
    b_b = account_value(rates, "borrow", t)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    delta = (
        g_core(rates, t, y + x1 * b_l, z, s)
        + g_core(rates, t, -y + x2 * b_b, -z, s)
        - x1 * r_l * b_l
        - x2 * r_b * b_b
    )
    bound = np.minimum((r_l - r_b) * x2 * b_b, (r_b - r_l) * x1 * b_l)
    return delta, bound


def driver_gap(
    rates: RateModel, asset: AssetModel, t, x1, x2, s, y, z
) -> np.ndarray:
    """``G^h(x1) - G^c(x2)`` for endowments of any sign

    Non-positive gaps order the prices as counterparty below hedger.
    """
    return g_hedger(rates, asset, t, x1, s, y, z) - g_counterparty(
        rates, asset, t, x2, s, y, z
    )


def lipschitz_bound(
    rates: RateModel,
    kind: Literal["lending", "borrowing", "core", "hedger", "counterparty"],
    s_max: float,
    beta_max: float | None = None,
) -> tuple[float, float]:
    """Lipschitz constants ``(L_y, L_z)`` of a driver for prices up to ``s_max``

    ``|G(y1, z1) - G(y2, z2)| <= L_y |y1 - y2| + L_z |z1 - z2|``.

    Parameters
    ----------
    rates : RateModel
        Rate model
    kind : {"lending", "borrowing", "core", "hedger", "counterparty"}
        Driver
    s_max : float
        Largest asset price considered
    beta_max : float | None, optional
        Largest funding spread, required for the hedger and counterparty drivers.
        None uses the largest borrowing rate. By default None
    """
    r_b = rates.r_b.maximum
    r_l_min = rates.r_l.minimum
    spread = r_b - r_l_min
    match kind:
        case "lending" | "borrowing":
            # account values never fall below one
            return spread, spread * s_max
        case "core":
            return r_b, r_b * s_max
        case "hedger" | "counterparty":
            beta = r_b if beta_max is None else beta_max
            return r_b, (beta - r_l_min) * s_max
    raise ValueError(f"Unknown driver '{kind}'.")
