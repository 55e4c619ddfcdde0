"""Simulation of replicating strategies along sampled asset paths."""

import warnings
from dataclasses import dataclass
from time import time
from typing import Literal, Protocol

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .drivers import cash_position
from .market import (
    AssetModel,
    ContractSpec,
    RateModel,
    _flow_events,
    _netted_funding,
    account_value,
    collateral_accounts,
    endowment_leg,
)
from .pde import girsanov_drift

__all__ = [
    "HedgePath",
    "HedgeResult",
    "NettedWealthReport",
    "PathSet",
    "netted_wealth_check",
    "replicate",
    "simulate_paths",
]

# share of clamped path-steps above which the hedge is reported unreliable
_CLAMP_LIMIT = 0.01


class PricingModel(Protocol):
    """Price and hedge-ratio source shared by the solvers."""

    party: str
    endowment: float

    def price(self, t, s) -> np.ndarray: ...

    def delta(self, t, s) -> np.ndarray: ...

    def bounds(self, t: float) -> tuple[float, float]: ...


@dataclass(frozen=True, eq=False)
class PathSet:
    """Simulated asset paths

    Parameters
    ----------
    times : np.ndarray
        Observation times, starting at 0
    prices : np.ndarray
        Prices with one path per row
    seed : int
        Seed of the generator
    measure : {"physical", "funding", "lending"}
        Measure the paths were drawn under
    first_path : int
        Index of the first path in the stream keyed by ``seed``
    """

    times: np.ndarray
    prices: np.ndarray
    seed: int
    measure: str
    first_path: int = 0

    @property
    def n_paths(self) -> int:
        return self.prices.shape[0]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def path(self, i: int) -> pd.Series:
        return pd.Series(
            self.prices[i], index=pd.Index(self.times, name="t"), name=f"path_{i}"
        )


def _normals(seed: int, paths: np.ndarray, n_steps: int) -> np.ndarray:
    """Standard normals of each path from a Philox stream keyed by (seed, path)"""
    out = np.empty((paths.size, n_steps))
    for row, index in enumerate(paths):
        bit_generator = np.random.Philox(key=(int(seed) << 64) | int(index))
        out[row] = np.random.Generator(bit_generator).standard_normal(n_steps)
    return out


def simulate_paths(
    asset: AssetModel,
    s0: float,
    maturity: float,
    n_steps: int,
    n_paths: int,
    seed: int,
    *,
    rates: RateModel | None = None,
    measure: Literal["physical", "funding", "lending"] = "physical",
    scheme: Literal["euler", "log-euler"] = "euler",
    first_path: int = 0,
    n_jobs: int = 1,
) -> PathSet:
    """Simulate the asset by Euler-Maruyama

    Path ``i`` draws its increments from a counter-based generator keyed by
    ``(seed, first_path + i)``, so results do not depend on ``n_jobs`` or on how
    a run is split into batches.

    Parameters
    ----------
    asset : AssetModel
        Asset dynamics
    s0 : float
        Initial price
    maturity : float
        Horizon in years
    n_steps : int
        Number of time steps
    n_paths : int
        Number of paths
    seed : int
        Non-negative seed below ``2**64``
    rates : RateModel | None, optional
        Rate model, required for the ``funding`` and ``lending`` measures.
        By default None
    measure : {"physical", "funding", "lending"}, optional
        ``physical`` uses the drift ``mu``; ``funding`` and ``lending`` remove the
        market price of risk so that the asset drifts at ``beta s - kappa`` and
        ``r_l s - kappa``. By default "physical"
    scheme : {"euler", "log-euler"}, optional
        ``log-euler`` steps the logarithm of the price and keeps it positive.
        By default "euler"
    first_path : int, optional
        Stream index of the first path, by default 0
    n_jobs : int, optional
        Number of jobs drawing the increments. -1 means using all processors.
        By default 1

    Returns
    -------
    PathSet
    """
    if n_steps < 1 or n_paths < 1:
        raise ValueError("n_steps and n_paths must be at least 1.")
    if not 0 <= seed < 2**64:
        raise ValueError(f"The seed must lie in [0, 2**64), got {seed}.")
    if first_path < 0:
        raise ValueError(f"first_path must be non-negative, got {first_path}.")
    if scheme not in ("euler", "log-euler"):
        raise ValueError(f"Unknown scheme '{scheme}'. Use 'euler' or 'log-euler'.")

    match measure:
        case "physical":
            funding_rate = None
        case "funding" | "lending":
            if rates is None:
                raise ValueError(f"The {measure} measure needs a rate model.")
            funding_rate = rates.r_l if measure == "lending" else None
        case _:
            raise ValueError(
                f"Unknown measure '{measure}'. "
                "Use 'physical', 'funding' or 'lending'."
            )

    def drift(t, s):
        mu = np.asarray(asset.mu(t, s), dtype=float)
        if measure == "physical":
            return mu
        rate = None if funding_rate is None else funding_rate(t)
        sigma = np.asarray(asset.sigma(t, s), dtype=float)
        return mu - sigma * girsanov_drift(asset, rates, t, s, funding_rate=rate)

    indices = np.arange(first_path, first_path + n_paths)
    chunks = np.array_split(indices, max(1, min(n_paths, 64)))
    normals = Parallel(n_jobs=n_jobs)(
        delayed(_normals)(seed, chunk, n_steps) for chunk in chunks if chunk.size
    )
    normals = np.concatenate(normals)

    times = np.linspace(0.0, maturity, n_steps + 1)
    dt = maturity / n_steps
    prices = np.empty((n_paths, n_steps + 1))
    prices[:, 0] = s0
    for k in range(n_steps):
        t, s = times[k], prices[:, k]
        sigma = np.asarray(asset.sigma(t, s), dtype=float)
        shock = np.sqrt(dt) * normals[:, k]
        if scheme == "euler":
            prices[:, k + 1] = s + drift(t, s) * dt + sigma * shock
        else:
            if np.any(s <= 0):
                raise ValueError("The log-Euler scheme needs positive prices.")
            log_vol = sigma / s
            growth = drift(t, s) / s - 0.5 * log_vol**2
            prices[:, k + 1] = s * np.exp(growth * dt + log_vol * shock)

    return PathSet(
        times=times, prices=prices, seed=seed, measure=measure, first_path=first_path
    )


@dataclass(frozen=True)
class HedgePath:
    """Replicating strategy along one path

    Holdings are set at ``times[:-1]``; ``portfolio`` and ``wealth`` are
    observed at every time, after rebalancing and after the contract flows.
    """

    times: np.ndarray
    prices: np.ndarray
    positions: np.ndarray
    lend_units: np.ndarray
    borrow_units: np.ndarray
    portfolio: np.ndarray
    wealth: np.ndarray
    eta_b: np.ndarray
    eta_l: np.ndarray
    error: float


@dataclass(frozen=True, eq=False)
class HedgeResult:
    """Replication of a contract along a path set

    Parameters
    ----------
    paths : PathSet
        Paths that were hedged
    party : {"hedger", "counterparty"}
        Replicating party
    endowment : float
        Initial cash of the party
    premium : np.ndarray
        Price charged at inception, one entry per path
    errors : np.ndarray
        Terminal replication errors ``V_T - V^L_T(x)``
    positions, lend_units, borrow_units : np.ndarray | None
        Asset units and account units held over each step
    portfolio : np.ndarray | None
        Portfolio value ``V^p``
    collateral : np.ndarray | None
        Collateral along the paths
    audit_residual : float
        Largest relative gap between the portfolio and the value of its
        holdings
    exclusivity_violations : int
        Path-steps holding both a lending and a borrowing position
    branch_agreement : float
        Share of path-steps where the cash balance borrows exactly when the
        driver's cash position is negative
    clamp_rate : float
        Share of path-steps outside the price range of the model
    """

    paths: PathSet
    party: str
    endowment: float
    premium: np.ndarray
    errors: np.ndarray
    positions: np.ndarray | None
    lend_units: np.ndarray | None
    borrow_units: np.ndarray | None
    portfolio: np.ndarray | None
    collateral: np.ndarray | None
    rates: RateModel
    audit_residual: float
    exclusivity_violations: int
    branch_agreement: float
    clamp_rate: float

    @property
    def sign(self) -> float:
        return 1.0 if self.party == "hedger" else -1.0

    @property
    def wealth(self) -> np.ndarray:
        """``V = V^p - C`` for the hedger and ``V^p + C`` for the counterparty."""
        self._check_kept()
        return self.portfolio - self.sign * self.collateral

    def _check_kept(self) -> None:
        if self.portfolio is None:
            raise ValueError("Holdings were not kept; replicate with keep_paths=True.")

    def summary(self) -> pd.Series:
        errors = self.errors
        return pd.Series(
            {
                "n_paths": errors.size,
                "n_steps": self.paths.n_steps,
                "mean_error": errors.mean(),
                "mean_abs_error": np.abs(errors).mean(),
                "std_error": errors.std(ddof=1) if errors.size > 1 else 0.0,
                "max_abs_error": np.abs(errors).max(),
                "audit_residual": self.audit_residual,
                "exclusivity_violations": self.exclusivity_violations,
                "branch_agreement": self.branch_agreement,
                "clamp_rate": self.clamp_rate,
            },
            name="replication",
        )

    def path(self, i: int) -> HedgePath:
        self._check_kept()
        times = self.paths.times
        eta_b, eta_l = collateral_accounts(
            self.rates, times, self.collateral[i], self.party
        )
        return HedgePath(
            times=times,
            prices=self.paths.prices[i],
            positions=self.positions[i],
            lend_units=self.lend_units[i],
            borrow_units=self.borrow_units[i],
            portfolio=self.portfolio[i],
            wealth=self.wealth[i],
            eta_b=eta_b,
            eta_l=eta_l,
            error=float(self.errors[i]),
        )

    def to_frame(self, i: int) -> pd.DataFrame:
        """Per-step table of one path for CSV export."""
        hedge = self.path(i)

        def pad(values):
            return np.append(values, np.nan)

        return pd.DataFrame(
            {
                "t": hedge.times,
                "s": hedge.prices,
                "xi": pad(hedge.positions),
                "psi_l": pad(hedge.lend_units),
                "psi_b": pad(hedge.borrow_units),
                "eta_b": hedge.eta_b,
                "eta_l": hedge.eta_l,
                "vp": hedge.portfolio,
                "v": hedge.wealth,
            }
        )


def replicate(
    model: PricingModel,
    rates: RateModel,
    contract: ContractSpec,
    x: float,
    paths: PathSet,
    *,
    asset: AssetModel,
    party: Literal["hedger", "counterparty"] | None = None,
    premium: float | None = None,
    keep_paths: bool = True,
    strict: bool | None = None,
) -> HedgeResult:
    """Run the replicating strategy of a pricing model along paths

    At every step the party holds ``xi = +-dv/ds`` units of the asset (sign by
    party) and keeps the rest of its portfolio in the lending account when
    positive and in the borrowing account when negative. Dividends, contract
    flows and collateral movements with their remuneration are credited to the
    portfolio. The terminal error is the wealth after all flows minus the
    endowment leg ``V^L_T(x)``.

    Parameters
    ----------
    model : PriceSurface | BackwardSolution
        Source of prices and hedge ratios
    rates : RateModel
        Rate model
    contract : ContractSpec
        Contract being replicated
    x : float
        Initial cash of the party
    paths : PathSet
        Paths from 0 to the contract maturity
    asset : AssetModel
        Asset dynamics, used for the dividends
    party : {"hedger", "counterparty"} | None, optional
        Replicating party. None uses the party of ``model``. By default None
    premium : float | None, optional
        Price charged at inception. None uses the model price at the initial
        price of each path. By default None
    keep_paths : bool, optional
        Keep the holdings of every path and step, by default True
    strict : bool | None, optional
        Response when more than 1% of path-steps lie outside the model's price
        range: True raises ValueError, None warns, False is silent.
        By default None

    Returns
    -------
    HedgeResult
    """
    party = model.party if party is None else party
    if party not in ("hedger", "counterparty"):
        raise ValueError(f"Unknown party '{party}'. Use 'hedger' or 'counterparty'.")
    if party != model.party:
        raise ValueError(f"The model prices for the {model.party}, not the {party}.")
    if not np.isclose(float(model.endowment), float(x)):
        warnings.warn(
            f"The model was solved for an endowment of {model.endowment}, "
            f"hedging with {x}.",
            UserWarning,
            stacklevel=2,
        )
    times = paths.times
    if abs(times[0]) > 1e-12 or abs(times[-1] - contract.maturity) > 1e-9:
        raise ValueError("Paths must run from 0 to the contract maturity.")

    sign = 1.0 if party == "hedger" else -1.0
    prices = paths.prices
    n_paths, n_steps = prices.shape[0], times.size - 1
    lend = account_value(rates, "lend", times)
    borrow = account_value(rates, "borrow", times)
    collateral = np.column_stack(
        [contract.collateral_value(times[k], prices[:, k]) for k in range(n_steps + 1)]
    )
    flows = np.zeros_like(prices)
    for k, _, cash in _flow_events(contract, times, prices):
        flows[:, k] += cash

    if premium is None:
        charged = np.asarray(model.price(0.0, prices[:, 0]), dtype=float)
    else:
        charged = np.full(n_paths, float(premium))

    if keep_paths:
        positions = np.empty((n_paths, n_steps))
        lend_units = np.empty((n_paths, n_steps))
        borrow_units = np.empty((n_paths, n_steps))
        portfolio = np.empty((n_paths, n_steps + 1))

    value = x + sign * (charged + collateral[:, 0])
    audit = 0.0
    violations = 0
    agreement = 0
    clamped = 0
    for k in range(n_steps):
        t = times[k]
        dt = times[k + 1] - t
        s = prices[:, k]
        low, high = model.bounds(t)
        clamped += int(np.count_nonzero((s < low) | (s > high)))
        s_model = np.clip(s, low, high)
        hedge_ratio = np.asarray(model.delta(t, s_model), dtype=float)
        xi = sign * hedge_ratio
        cash = value - xi * s
        psi_l = np.maximum(cash, 0.0) / lend[k]
        psi_b = -np.maximum(-cash, 0.0) / borrow[k]

        rebuilt = xi * s + psi_l * lend[k] + psi_b * borrow[k]
        audit = max(
            audit, float(np.max(np.abs(rebuilt - value) / np.maximum(1, np.abs(value))))
        )
        violations += int(np.count_nonzero(psi_l * psi_b != 0))
        state = np.asarray(model.price(t, s_model), dtype=float) + collateral[:, k]
        expected = cash_position(party, rates, t, x, s_model, state, hedge_ratio)
        agreement += int(np.count_nonzero((cash < 0) == (expected < 0)))

        if keep_paths:
            positions[:, k] = xi
            lend_units[:, k] = psi_l
            borrow_units[:, k] = psi_b
            portfolio[:, k] = value

        dividends = np.asarray(asset.kappa(t, s), dtype=float) * dt
        remuneration = rates.r_c(t) * collateral[:, k] * dt
        value = (
            xi * (prices[:, k + 1] + dividends)
            + psi_l * lend[k + 1]
            + psi_b * borrow[k + 1]
            + sign
            * (flows[:, k + 1] + collateral[:, k + 1] - collateral[:, k] - remuneration)
        )

    if keep_paths:
        portfolio[:, n_steps] = value
    wealth = value - sign * collateral[:, n_steps]
    errors = wealth - endowment_leg(rates, x, times[-1])

    path_steps = n_paths * n_steps
    clamp_rate = clamped / path_steps
    if clamp_rate > _CLAMP_LIMIT and strict is not False:
        message = (
            f"{clamp_rate:.2%} of path-steps lie outside the price range of the "
            "model; widen the grid."
        )
        if strict:
            raise ValueError(message)
        warnings.warn(message, UserWarning, stacklevel=2)

    return HedgeResult(
        paths=paths,
        party=party,
        endowment=float(x),
        premium=charged,
        errors=errors,
        positions=positions if keep_paths else None,
        lend_units=lend_units if keep_paths else None,
        borrow_units=borrow_units if keep_paths else None,
        portfolio=portfolio if keep_paths else None,
        collateral=collateral if keep_paths else None,
        rates=rates,
        audit_residual=audit,
        exclusivity_violations=violations,
        branch_agreement=agreement / path_steps,
        clamp_rate=clamp_rate,
    )


@dataclass(frozen=True)
class _Unhedged:
    """Model that charges its prices but never trades the asset"""

    model: PricingModel

    @property
    def party(self) -> str:
        return self.model.party

    @property
    def endowment(self) -> float:
        return self.model.endowment

    def price(self, t, s) -> np.ndarray:
        return self.model.price(t, s)

    def delta(self, t, s) -> np.ndarray:
        return np.zeros(np.broadcast(np.asarray(t), np.asarray(s)).shape)

    def bounds(self, t: float) -> tuple[float, float]:
        return self.model.bounds(t)


@dataclass(frozen=True)
class NettedWealthReport:
    """Supermartingale diagnostics of the netted wealth

    ``netted`` statistics refer to ``(V_T + U_T - V^L_T(x)) / B_l(T)``, the
    discounted wealth of the strategy combined with the unwound contract.
    ``gain`` statistics refer to ``(V_T - V^L_T(x)) / B_l(T)``, the discounted
    gain of the sale over the endowment.
    """

    netted_mean: float
    netted_se: float
    gain_mean: float
    gain_se: float
    netted_flag: bool
    gain_flag: bool
    min_discounted_netted: float
    n_paths: int
    n_steps: int
    tolerance: float

    @property
    def arbitrage(self) -> bool:
        return self.netted_flag or self.gain_flag

    @property
    def passed(self) -> bool:
        return not self.arbitrage

    def to_series(self) -> pd.Series:
        return pd.Series(
            {
                "netted_mean": self.netted_mean,
                "netted_se": self.netted_se,
                "gain_mean": self.gain_mean,
                "gain_se": self.gain_se,
                "netted_flag": self.netted_flag,
                "gain_flag": self.gain_flag,
                "arbitrage": self.arbitrage,
                "min_discounted_netted": self.min_discounted_netted,
                "n_paths": self.n_paths,
                "n_steps": self.n_steps,
                "tolerance": self.tolerance,
            },
            name="netted_wealth",
        )


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def netted_wealth_check(
    model: PricingModel,
    rates: RateModel,
    asset: AssetModel,
    contract: ContractSpec,
    x: float,
    s0: float,
    *,
    n_paths: int = 100_000,
    n_steps: int = 250,
    seed: int = 0,
    premium: float | None = None,
    strategy: Literal["replicate", "null"] = "replicate",
    batch_size: int = 10_000,
    measure: Literal["lending", "funding"] = "lending",
    tolerance: float = 0.05,
    n_jobs: int = 1,
    verbose: bool = False,
) -> NettedWealthReport:
    """Test a hedger's sale for arbitrage on simulated paths

    Paths are drawn under the lending measure, where the lending-discounted
    cum-dividend asset is a martingale. The discounted netted wealth of an
    admissible strategy is then a supermartingale, so a netted mean more than
    three standard errors above zero flags an arbitrage. A sale whose
    discounted gain exceeds three standard errors plus ``tolerance`` is
    flagged as well; ``tolerance`` absorbs the discretisation bias of the
    hedge.

    Parameters
    ----------
    model : PriceSurface | BackwardSolution
        Hedger's pricing model
    rates : RateModel
        Rate model
    asset : AssetModel
        Asset dynamics
    contract : ContractSpec
        Contract sold by the hedger
    x : float
        Non-negative initial cash of the hedger
    s0 : float
        Initial price
    n_paths : int, optional
        Number of paths, by default 100_000
    n_steps : int, optional
        Number of rebalancing steps, by default 250
    seed : int, optional
        Seed of the path generator, by default 0
    premium : float | None, optional
        Price charged for the sale, None charges the model price.
        By default None
    strategy : {"replicate", "null"}, optional
        ``null`` keeps all wealth in cash, by default "replicate"
    batch_size : int, optional
        Paths simulated at once, by default 10_000
    measure : {"lending", "funding"}, optional
        Measure of the paths, by default "lending"
    tolerance : float, optional
        Allowance on the gain statistic, by default 0.05
    n_jobs : int, optional
        Number of jobs drawing the increments, by default 1
    verbose : bool, optional
        Whether to print progress information, by default False

    Returns
    -------
    NettedWealthReport
    """
    start = time()
    if x < 0:
        raise ValueError(f"The netted wealth check needs x >= 0, got {x}.")
    if model.party != "hedger":
        raise ValueError("The netted wealth check applies to the hedger's sale.")
    match strategy:
        case "replicate":
            trader = model
        case "null":
            trader = _Unhedged(model)
        case _:
            raise ValueError(f"Unknown strategy '{strategy}'.")

    maturity = contract.maturity
    euler_step = min(1e-3, maturity / n_steps)
    netted, gains = [], []
    lowest = np.inf
    for first in range(0, n_paths, batch_size):
        size = min(batch_size, n_paths - first)
        paths = simulate_paths(
            asset,
            s0,
            maturity,
            n_steps,
            size,
            seed,
            rates=rates,
            measure=measure,
            first_path=first,
            n_jobs=n_jobs,
        )
        result = replicate(
            trader, rates, contract, x, paths, asset=asset, premium=premium
        )
        funding = _netted_funding(
            rates, contract, paths.times, paths.prices, result.premium, euler_step
        )
        lend = account_value(rates, "lend", paths.times)
        leg = endowment_leg(rates, x, paths.times)
        discounted = (result.wealth + funding - leg) / lend
        netted.append(discounted[:, -1])
        gains.append(result.errors / lend[-1])
        lowest = min(lowest, float(discounted.min()))
        if verbose:
            print(f"{(time() - start):.2f}s: {first + size} of {n_paths} paths")

    netted_mean, netted_se = _mean_and_se(np.concatenate(netted))
    gain_mean, gain_se = _mean_and_se(np.concatenate(gains))
    return NettedWealthReport(
        netted_mean=netted_mean,
        netted_se=netted_se,
        gain_mean=gain_mean,
        gain_se=gain_se,
        netted_flag=netted_mean > 3 * netted_se + 1e-12,
        gain_flag=gain_mean > 3 * gain_se + tolerance,
        min_discounted_netted=lowest,
        n_paths=n_paths,
        n_steps=n_steps,
        tolerance=tolerance,
    )
