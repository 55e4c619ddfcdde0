from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import partial
from typing import Literal

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid

__all__ = [
    "AssetModel",
    "ContractSpec",
    "Endowment",
    "Form",
    "PiecewiseConstant",
    "RateModel",
    "account_value",
    "collateral_accounts",
    "cumulative_ac",
    "endowment_leg",
    "funding_process_fc",
    "netted_funding_u",
]

# tolerance used when comparing times against grid and maturity
_TIME_EPS = 1e-12


def _constant(value: float, t, s) -> np.ndarray:
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(s)).shape) + value


def _proportional(value: float, t, s) -> np.ndarray:
    return value * (np.zeros(np.asarray(t).shape) + np.asarray(s, dtype=float))


_form_functions = {
    "constant": _constant,
    "proportional": _proportional,
    "lognormal": _proportional,
}


@dataclass(frozen=True)
class Form:
    """Named functional form of ``(t, s)``

    Parameters
    ----------
    name : {"constant", "proportional", "lognormal"}
        ``constant`` returns ``value``, ``proportional`` and ``lognormal``
        return ``value * s``. ``lognormal`` marks a volatility that moves the
        price in log space.
    value : float
        Parameter of the form
    """

    name: Literal["constant", "proportional", "lognormal"]
    value: float

    def __post_init__(self):
        if self.name not in _form_functions:
            raise ValueError(
                f"Unknown functional form '{self.name}'. "
                f"Use one of {sorted(_form_functions)}."
            )
        if not np.isfinite(self.value):
            raise ValueError(f"Form parameter must be finite, got {self.value}.")

    def __call__(self, t, s) -> np.ndarray:
        return _form_functions[self.name](self.value, t, s)


@dataclass(frozen=True)
class PiecewiseConstant:
    """Right-continuous step function of time

    Parameters
    ----------
    starts : Sequence[float]
        Start of each segment, strictly increasing and beginning at 0
    values : Sequence[float]
        Value on each segment
    """

    starts: tuple[float, ...]
    values: tuple[float, ...]
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        starts = np.asarray(self.starts, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if starts.ndim != 1 or starts.size == 0 or starts.size != values.size:
            raise ValueError("Segments need matching non-empty starts and values.")
        if starts[0] != 0:
            raise ValueError(f"The first segment must start at 0, got {starts[0]}.")
        if np.any(np.diff(starts) <= 0):
            raise ValueError("Segment starts must be strictly increasing.")
        if not np.isfinite(values).all():
            raise ValueError("Segment values must be finite.")
        object.__setattr__(self, "starts", tuple(starts.tolist()))
        object.__setattr__(self, "values", tuple(values.tolist()))
        # integral from 0 to the start of each segment
        cumulative = np.concatenate([[0.0], np.cumsum(values[:-1] * np.diff(starts))])
        object.__setattr__(self, "_cumulative", cumulative)

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls(starts=(0.0,), values=(value,))

    def _segment(self, t) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.starts), t, side="right") - 1
        return np.clip(idx, 0, len(self.starts) - 1)

    def __call__(self, t) -> np.ndarray:
        return np.asarray(self.values)[self._segment(t)]

    def _primitive(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = self._segment(t)
        starts = np.asarray(self.starts)
        return self._cumulative[idx] + np.asarray(self.values)[idx] * (t - starts[idx])

    def integral(self, t0, t1) -> np.ndarray:
        """Exact integral over ``[t0, t1]``."""
        return self._primitive(t1) - self._primitive(t0)

    @property
    def maximum(self) -> float:
        return max(self.values)

    @property
    def minimum(self) -> float:
        return min(self.values)


def _as_curve(rate: float | PiecewiseConstant) -> PiecewiseConstant:
    if isinstance(rate, PiecewiseConstant):
        return rate
    return PiecewiseConstant.constant(float(rate))


@dataclass(frozen=True)
class RateModel:
    """Deterministic lending, borrowing and collateral rates

    Parameters
    ----------
    r_l : PiecewiseConstant
        Lending rate
    r_b : PiecewiseConstant
        Borrowing rate, ``0 <= r_l <= r_b`` at all times
    r_c : PiecewiseConstant
        Collateral remuneration rate
    maturity : float
        Horizon ``T`` in years on which the rates are defined
    """

    r_l: PiecewiseConstant
    r_b: PiecewiseConstant
    r_c: PiecewiseConstant
    maturity: float

    def __post_init__(self):
        for name in ("r_l", "r_b", "r_c"):
            object.__setattr__(self, name, _as_curve(getattr(self, name)))
        if not (np.isfinite(self.maturity) and self.maturity > 0):
            raise ValueError(f"Maturity must be positive, got {self.maturity}.")
        self.validate()

    @classmethod
    def constant(
        cls,
        r_l: float,
        r_b: float,
        r_c: float | None = None,
        maturity: float = 1.0,
    ) -> "RateModel":
        """Constant rates, the collateral rate defaults to the lending rate."""
        return cls(
            r_l=PiecewiseConstant.constant(r_l),
            r_b=PiecewiseConstant.constant(r_b),
            r_c=PiecewiseConstant.constant(r_l if r_c is None else r_c),
            maturity=maturity,
        )

    @classmethod
    def from_segments(
        cls,
        r_l: Sequence[tuple[float, float]],
        r_b: Sequence[tuple[float, float]],
        r_c: Sequence[tuple[float, float]],
        maturity: float,
    ) -> "RateModel":
        """Build from lists of ``(t_start, rate)`` segments."""

        def _curve(segments):
            starts, values = zip(*segments, strict=True)
            return PiecewiseConstant(starts=starts, values=values)

        return cls(
            r_l=_curve(r_l), r_b=_curve(r_b), r_c=_curve(r_c), maturity=maturity
        )

    def validate(self) -> None:
        """Check ``0 <= r_l <= r_b`` on every segment of either curve."""
        knots = np.union1d(self.r_l.starts, self.r_b.starts)
        lend = self.r_l(knots)
        borrow = self.r_b(knots)
        if np.any(lend < 0):
            raise ValueError("The lending rate must be non-negative.")
        if np.any(lend > borrow):
            bad = knots[lend > borrow]
            raise ValueError(
                f"The lending rate exceeds the borrowing rate from t={bad[0]:g}."
            )

    def curve(self, which: Literal["lend", "borrow", "collateral"]):
        match which:
            case "lend":
                return self.r_l
            case "borrow":
                return self.r_b
            case "collateral":
                return self.r_c
        raise ValueError(
            f"Unknown account '{which}'. Use 'lend', 'borrow' or 'collateral'."
        )

    @property
    def equal(self) -> bool:
        """True when lending and borrowing rates coincide everywhere."""
        knots = np.union1d(self.r_l.starts, self.r_b.starts)
        return bool(np.all(self.r_l(knots) == self.r_b(knots)))


def _check_times(rates: RateModel, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < -_TIME_EPS) or np.any(t > rates.maturity + _TIME_EPS):
        raise ValueError(
            f"Time must lie in [0, {rates.maturity:g}], got values in "
            f"[{np.min(t):g}, {np.max(t):g}]."
        )
    return np.clip(t, 0.0, rates.maturity)


def account_value(
    rates: RateModel,
    which: Literal["lend", "borrow", "collateral"],
    t,
    t0: float = 0.0,
) -> np.ndarray:
    """Value at ``t`` of one unit invested in an account at ``t0``

    Parameters
    ----------
    rates : RateModel
        Rate model
    which : {"lend", "borrow", "collateral"}
        Account to use
    t : float | np.ndarray
        Evaluation time(s)
    t0 : float, optional
        Investment time, by default 0. ``B(0, t0) * B(t0, t) = B(0, t)``.

    Returns
    -------
    np.ndarray
        ``exp`` of the exact integral of the piecewise-constant rate
    """
    curve = rates.curve(which)
    t = _check_times(rates, t)
    t0 = _check_times(rates, t0)
    return np.exp(curve.integral(t0, t))


@dataclass(frozen=True)
class Endowment:
    """Initial cash of a trading party."""

    x: float

    def __post_init__(self):
        if not np.isfinite(self.x):
            raise ValueError(f"Endowment must be finite, got {self.x}.")

    def __float__(self) -> float:
        return float(self.x)

    def leg(self, rates: RateModel, t) -> np.ndarray:
        return endowment_leg(rates, self, t)


def endowment_leg(rates: RateModel, x: float | Endowment, t) -> np.ndarray:
    """Value of the endowment held in cash, ``x+ B_l(t) - x- B_b(t)``."""
    x = float(x)
    if x >= 0:
        return x * account_value(rates, "lend", t)
    return x * account_value(rates, "borrow", t)


@dataclass(frozen=True)
class AssetModel:
    """Diffusion of the risky asset

    All coefficients are callables of ``(t, s)`` accepting numpy arrays, typically
    :class:`Form` instances.

    Parameters
    ----------
    mu : Callable
        Drift in price units per year
    sigma : Callable
        Volatility in price units per square-root year
    kappa : Callable
        Dividend intensity in price units per year
    beta : Callable | None
        Funding-spread rate (1/year) entering the driver as ``z * beta * s``.
        None uses the borrowing rate, the smallest admissible choice.
    domain : tuple[float, float]
        Interval of attainable prices, by default ``(0, inf)``
    """

    mu: Callable = Form("constant", 0.0)
    sigma: Callable = Form("lognormal", 0.2)
    kappa: Callable = Form("constant", 0.0)
    beta: Callable | None = None
    domain: tuple[float, float] = (0.0, np.inf)

    def funding_spread(self, rates: RateModel, t, s) -> np.ndarray:
        if self.beta is None:
            shape = np.broadcast(np.asarray(t), np.asarray(s)).shape
            return rates.r_b(t) + np.zeros(shape)
        return np.asarray(self.beta(t, s), dtype=float)

    def validate(self, rates: RateModel, s: np.ndarray, t: np.ndarray) -> None:
        """Check volatility and funding spread on a sample of ``(t, s)``."""
        tt, ss = np.meshgrid(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        sigma = np.abs(self.sigma(tt, ss))
        if not np.isfinite(sigma).all() or sigma.min() < 1e-10:
            raise ValueError(
                "Volatility must be finite and bounded away from zero on the grid."
            )
        spread = self.funding_spread(rates, tt, ss)
        if np.any(spread < rates.r_b(tt) - 1e-14):
            raise ValueError(
                "The funding spread beta must not fall below the borrowing rate."
            )


def _call_payoff(strike: float, s) -> np.ndarray:
    return np.maximum(np.asarray(s, dtype=float) - strike, 0.0)


def _put_payoff(strike: float, s) -> np.ndarray:
    return np.maximum(strike - np.asarray(s, dtype=float), 0.0)


def _zero_payoff(s) -> np.ndarray:
    return np.zeros(np.shape(s))


def _linear_payoff(knots: np.ndarray, levels: np.ndarray, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    inner = np.interp(s, knots, levels)
    left = levels[0] + (s - knots[0]) * (levels[1] - levels[0]) / (knots[1] - knots[0])
    right = levels[-1] + (s - knots[-1]) * (levels[-1] - levels[-2]) / (
        knots[-1] - knots[-2]
    )
    return np.where(s < knots[0], left, np.where(s > knots[-1], right, inner))


def _constant_collateral(value: float, maturity: float, t, s) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    shape = np.broadcast(t, np.asarray(s)).shape
    return np.where(t < maturity - _TIME_EPS, value, 0.0) + np.zeros(shape)


def _payoff_collateral(
    fraction: float, payoff: Callable, maturity: float, t, s
) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.where(t < maturity - _TIME_EPS, fraction * payoff(s), 0.0)


# prices at which the collateral is required to vanish at maturity
_COLLATERAL_GRID = np.concatenate([[0.0], np.geomspace(1e-3, 1e5, 81)])


@dataclass(frozen=True)
class ContractSpec:
    """European contract with cash flows and cash collateral

    Flows are seen from the hedger (the seller): the payoff ``H`` is paid by
    the hedger at maturity, ``initial_flow`` (the premium) and the
    ``intermediate_flows`` are received by the hedger.

    Parameters
    ----------
    payoff : Callable
        Terminal payoff ``H(s)``
    maturity : float
        Maturity ``T`` in years
    initial_flow : float, optional
        Cash ``A_0`` exchanged at inception, by default 0
    intermediate_flows : tuple, optional
        Pairs ``(time, f)`` with ``time`` in ``(0, T]`` and ``f(s)`` the cash received
        by the hedger, by default ()
    collateral : Callable | None, optional
        Collateral ``C(t, s)`` with ``C(T, s) = 0``; positive values are held by the
        hedger. None means no collateral. By default None
    """

    payoff: Callable
    maturity: float
    initial_flow: float = 0.0
    intermediate_flows: tuple[tuple[float, Callable], ...] = ()
    collateral: Callable | None = None

    def __post_init__(self):
        if not (np.isfinite(self.maturity) and self.maturity > 0):
            raise ValueError(f"Maturity must be positive, got {self.maturity}.")
        flows = tuple((float(time), f) for time, f in self.intermediate_flows)
        for time, _ in flows:
            if not (0 < time <= self.maturity + _TIME_EPS):
                raise ValueError(
                    f"Flow times must lie in (0, {self.maturity:g}], got {time:g}."
                )
        object.__setattr__(self, "intermediate_flows", flows)
        if self.collateral is not None:
            terminal = np.asarray(
                self.collateral(self.maturity, _COLLATERAL_GRID), dtype=float
            )
            if np.any(np.abs(terminal) > 0):
                raise ValueError("Collateral must vanish at maturity, C(T, s) = 0.")

    @classmethod
    def call(cls, strike: float, maturity: float, **kwargs) -> "ContractSpec":
        payoff = partial(_call_payoff, float(strike))
        return cls(payoff=payoff, maturity=maturity, **kwargs)

    @classmethod
    def put(cls, strike: float, maturity: float, **kwargs) -> "ContractSpec":
        payoff = partial(_put_payoff, float(strike))
        return cls(payoff=payoff, maturity=maturity, **kwargs)

    @classmethod
    def zero(cls, maturity: float, **kwargs) -> "ContractSpec":
        return cls(payoff=_zero_payoff, maturity=maturity, **kwargs)

    @classmethod
    def piecewise_linear(
        cls, points: Sequence[tuple[float, float]], maturity: float, **kwargs
    ) -> "ContractSpec":
        """Payoff interpolating ``points``, extrapolated linearly at both ends."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("A piecewise-linear payoff needs at least two points.")
        if np.any(np.diff(pts[:, 0]) <= 0):
            raise ValueError("Payoff knots must be strictly increasing.")
        return cls(
            payoff=partial(_linear_payoff, pts[:, 0], pts[:, 1]),
            maturity=maturity,
            **kwargs,
        )

    @staticmethod
    def constant_collateral(value: float, maturity: float) -> Callable:
        """Collateral of ``value`` returned at maturity."""
        return partial(_constant_collateral, float(value), float(maturity))

    @staticmethod
    def payoff_collateral(
        fraction: float, payoff: Callable, maturity: float
    ) -> Callable:
        """Collateral equal to ``fraction * H(s)`` before maturity."""
        return partial(_payoff_collateral, float(fraction), payoff, float(maturity))

    def collateral_value(self, t, s) -> np.ndarray:
        if self.collateral is None:
            return np.zeros(np.broadcast(np.asarray(t), np.asarray(s)).shape)
        return np.asarray(self.collateral(t, s), dtype=float)

    @property
    def is_collateralized(self) -> bool:
        return self.collateral is not None


def collateral_accounts(
    rates: RateModel,
    t,
    collateral,
    party: Literal["hedger", "counterparty"] = "hedger",
) -> tuple[np.ndarray, np.ndarray]:
    """Holdings ``(eta_b, eta_l)`` of the collateral accounts

    The hedger posts ``C-`` and receives ``C+``; the counterparty faces ``-C``. The
    collateral adjustment of the wealth is ``(eta_b + eta_l) * B_c``.
    """
    collateral = np.asarray(collateral, dtype=float)
    unit = account_value(rates, "collateral", t)
    received = np.maximum(collateral, 0.0)
    posted = np.maximum(-collateral, 0.0)
    if party == "counterparty":
        received, posted = posted, received
    return -received / unit, posted / unit


def _path_arrays(path: pd.Series) -> tuple[np.ndarray, np.ndarray]:
    """Validate a time-indexed price path and return ``(times, prices)``"""
    if not isinstance(path, pd.Series):
        raise ValueError("A path must be a pandas Series indexed by time.")
    times = path.index.to_numpy(dtype=float)
    prices = path.to_numpy(dtype=float)
    if times.size == 0:
        raise ValueError("The path is empty.")
    if np.any(np.diff(times) <= 0):
        raise ValueError("Path times must be strictly increasing.")
    if times[0] < 0 or not np.isfinite(prices).all():
        raise ValueError("Path times must be non-negative and prices finite.")
    return times, prices


def _flow_events(
    contract: ContractSpec, times: np.ndarray, prices: np.ndarray
) -> list[tuple[int, float, np.ndarray]]:
    """Contract flows ``(index, time, cash)`` received by the hedger

    Each flow is booked at the first path time at or after its own time.
    ``prices`` has paths along the first axis. The payoff is booked as ``-H`` when
    the path reaches maturity.
    """
    events = []
    for time, f in contract.intermediate_flows:
        k = int(np.searchsorted(times, time - _TIME_EPS, side="left"))
        if k < times.size:
            events.append((k, time, np.asarray(f(prices[:, k]), dtype=float)))
    if times[-1] >= contract.maturity - _TIME_EPS:
        k = times.size - 1
        payoff = np.asarray(contract.payoff(prices[:, k]), dtype=float)
        events.append((k, contract.maturity, -payoff))
    return events


def funding_process_fc(
    rates: RateModel, contract: ContractSpec, path: pd.Series
) -> pd.Series:
    """Collateral remuneration ``F^C_t = -int_0^t r_c C du`` along a path

    Integrated with the trapezoidal rule on the path times.
    """
    times, prices = _path_arrays(path)
    integrand = rates.r_c(times) * contract.collateral_value(times, prices)
    values = -cumulative_trapezoid(integrand, times, initial=0.0)
    return pd.Series(values, index=path.index, name="F^C")


def cumulative_ac(
    rates: RateModel,
    contract: ContractSpec,
    path: pd.Series,
    discount: Literal["none", "lend", "borrow"] = "none",
) -> pd.Series:
    """Collateral-adjusted cumulative flows ``A^C = A + C + F^C`` along a path

    Parameters
    ----------
    rates : RateModel
        Rate model
    contract : ContractSpec
        Contract
    path : pd.Series
        Prices indexed by strictly increasing times
    discount : {"none", "lend", "borrow"}, optional
        ``none`` returns ``A^C`` itself. ``lend`` and ``borrow`` return the
        discounted integral over ``(0, t]``, starting at 0, with jumps discounted at
        their own time. By default "none"

    Returns
    -------
    pd.Series
    """
    times, prices = _path_arrays(path)
    collateral = contract.collateral_value(times, prices)
    events = _flow_events(contract, times, prices[None, :])

    if discount == "none":
        flows = np.zeros_like(times)
        flows[0] += contract.initial_flow
        for k, _, cash in events:
            flows[k] += cash[0]
        fc = funding_process_fc(rates, contract, path).to_numpy()
        values = np.cumsum(flows) + collateral + fc
        return pd.Series(values, index=path.index, name="A^C")

    if discount not in ("lend", "borrow"):
        raise ValueError(f"Unknown discounting '{discount}'.")
    inverse = 1.0 / account_value(rates, discount, times)
    increments = np.zeros_like(times)
    for k, time, cash in events:
        increments[k] += cash[0] / account_value(rates, discount, time)
    # Stieltjes part from collateral movements and its remuneration
    increments[1:] += 0.5 * (inverse[1:] + inverse[:-1]) * np.diff(collateral)
    remuneration = inverse * rates.r_c(times) * collateral
    increments[1:] -= 0.5 * (remuneration[1:] + remuneration[:-1]) * np.diff(times)
    values = np.cumsum(increments)
    return pd.Series(values, index=path.index, name=f"A^C,{discount}")


def _netted_funding(
    rates: RateModel,
    contract: ContractSpec,
    times: np.ndarray,
    prices: np.ndarray,
    initial_flow: np.ndarray | float,
    dt: float,
) -> np.ndarray:
    """Explicit Euler solution of the unwound-leg funding equation

    ``prices`` has one path per row. Returns ``U`` on the path times.
    """
    if dt <= 0:
        raise ValueError(f"The step size must be positive, got {dt}.")
    n_paths = prices.shape[0]
    collateral = contract.collateral_value(times[None, :], prices)
    flows = {}
    for k, _, cash in _flow_events(contract, times, prices):
        flows[k] = flows.get(k, 0.0) + cash

    u = np.empty((n_paths, times.size))
    u[:, 0] = -(np.zeros(n_paths) + initial_flow)
    if 0 in flows:
        u[:, 0] -= flows[0]
    for k in range(times.size - 1):
        t0, t1 = times[k], times[k + 1]
        n_sub = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
        h = (t1 - t0) / n_sub
        current = u[:, k].copy()
        for m in range(n_sub):
            w = m / n_sub
            t = t0 + m * h
            c = (1 - w) * collateral[:, k] + w * collateral[:, k + 1]
            gap = current - c
            current = current + h * (
                rates.r_l(t) * np.maximum(gap, 0.0)
                - rates.r_b(t) * np.maximum(-gap, 0.0)
                + rates.r_c(t) * c
            )
        if k + 1 in flows:
            current = current - flows[k + 1]
        u[:, k + 1] = current
    return u


def netted_funding_u(
    rates: RateModel,
    contract: ContractSpec,
    path: pd.Series,
    dt: float = 1e-3,
) -> pd.Series:
    """Funding value ``U`` of the unwound contract along a path

    Solves ``U_t = int r_l (U - C)+ du - int r_b (U - C)- du + int r_c C du - A_t``
    by explicit Euler with steps no longer than ``dt`` between path times and
    applies ``-dA`` at each flow.

    Parameters
    ----------
    rates : RateModel
        Rate model
    contract : ContractSpec
        Contract; ``initial_flow`` is ``A_0``
    path : pd.Series
        Prices indexed by strictly increasing times starting at 0
    dt : float, optional
        Maximal Euler step in years, by default 1e-3

    Returns
    -------
    pd.Series
    """
    times, prices = _path_arrays(path)
    u = _netted_funding(
        rates, contract, times, prices[None, :], contract.initial_flow, dt
    )
    return pd.Series(u[0], index=path.index, name="U")
