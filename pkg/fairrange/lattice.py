"""Backward induction of the pricing equations on a recombining binomial lattice.

The lattice is the oracle for the finite-difference engine and the only solver
for collateralised contracts.
"""

from collections.abc import Callable
from dataclasses import dataclass
from time import time
from typing import Literal

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .drivers import (
    DriverInput,
    g_borrowing,
    g_counterparty,
    g_hedger,
    g_lending,
    lipschitz_bound,
)
from .market import AssetModel, ContractSpec, Form, RateModel, account_value
from .pde import ConvergenceError

__all__ = [
    "BackwardSolution",
    "FixedPointReport",
    "Lattice",
    "LatticeSolver",
    "backward_solve",
    "build_lattice",
    "full_collateral_fixed_point",
    "price_with_collateral",
]

# slack on probabilities before they are reported out of range
_PROBABILITY_EPS = 1e-12


def _up_probabilities(
    times: np.ndarray, nodes: np.ndarray, drift: Callable
) -> np.ndarray:
    """Up-move probabilities matching the conditional mean ``s + drift(t, s) dt``"""
    n = times.size - 1
    dt = times[1] - times[0]
    probabilities = np.full((n, n), np.nan)
    for i in range(n):
        s = nodes[i, : i + 1]
        down = nodes[i + 1, : i + 1]
        up = nodes[i + 1, 1 : i + 2]
        mean = s + np.asarray(drift(times[i], s), dtype=float) * dt
        probabilities[i, : i + 1] = (mean - down) / (up - down)

    low, high = np.nanmin(probabilities), np.nanmax(probabilities)
    if low < -_PROBABILITY_EPS or high > 1 + _PROBABILITY_EPS:
        raise ValueError(
            f"Lattice probabilities fall outside [0, 1] (range [{low:.4g}, "
            f"{high:.4g}]). Reduce the time step by increasing n_steps."
        )
    return np.clip(probabilities, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Lattice:
    """Recombining binomial lattice of the asset price

    Parameters
    ----------
    times : np.ndarray
        Level times ``t_0 = 0, ..., t_n = T``
    nodes : np.ndarray
        Asset prices ``nodes[i, j]`` after ``j`` up moves out of ``i``; entries
        with ``j > i`` are NaN
    probabilities : np.ndarray
        Up-move probabilities ``probabilities[i, j]`` under the funding measure,
        in which the asset drifts at ``beta s - kappa``
    rates : RateModel
        Rate model
    asset : AssetModel
        Asset dynamics
    """

    times: np.ndarray
    nodes: np.ndarray
    probabilities: np.ndarray
    rates: RateModel
    asset: AssetModel

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def maturity(self) -> float:
        return float(self.times[-1])

    @property
    def s0(self) -> float:
        return float(self.nodes[0, 0])

    def level(self, i: int) -> np.ndarray:
        """Asset prices at level ``i``."""
        return self.nodes[i, : i + 1]

    def probabilities_under(
        self, measure: Literal["funding", "lend", "borrow"] = "funding"
    ) -> np.ndarray:
        """Up-move probabilities under a pricing measure

        ``funding`` is stored on the lattice. ``lend`` and ``borrow`` let the
        asset drift at ``r s - kappa`` with the lending or borrowing rate.
        """
        match measure:
            case "funding":
                return self.probabilities
            case "lend" | "borrow":
                curve = self.rates.curve(measure)

                def drift(t, s):
                    return curve(t) * s - self.asset.kappa(t, s)

                return _up_probabilities(self.times, self.nodes, drift)
        raise ValueError(
            f"Unknown measure '{measure}'. Use 'funding', 'lend' or 'borrow'."
        )


def build_lattice(
    asset: AssetModel,
    rates: RateModel,
    s0: float,
    maturity: float,
    n_steps: int,
) -> Lattice:
    """Build a binomial lattice under the funding measure

    Moves are multiplicative, ``s0 exp((2j - i) sigma sqrt(dt))``, for a
    lognormal or proportional volatility and additive,
    ``s0 + (2j - i) sigma sqrt(dt)``, for a constant one. Probabilities match
    the conditional mean of the asset under the funding measure.

    Parameters
    ----------
    asset : AssetModel
        Asset dynamics; ``sigma`` must be a :class:`~fairrange.market.Form`
    rates : RateModel
        Rate model covering ``maturity``
    s0 : float
        Spot price
    maturity : float
        Maturity in years
    n_steps : int
        Number of time steps

    Returns
    -------
    Lattice
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be at least 1, got {n_steps}.")
    if not (np.isfinite(s0) and s0 > 0):
        raise ValueError(f"Spot price must be positive, got {s0}.")
    if maturity > rates.maturity + 1e-12:
        raise ValueError("The rate model does not cover the lattice maturity.")
    sigma = asset.sigma
    if not isinstance(sigma, Form):
        raise ValueError(
            "The lattice needs a constant, proportional or lognormal volatility form."
        )
    if sigma.value <= 0:
        raise ValueError(f"Volatility must be positive, got {sigma.value}.")

    times = np.linspace(0.0, maturity, n_steps + 1)
    dt = maturity / n_steps
    i = np.arange(n_steps + 1)[:, None]
    j = np.arange(n_steps + 1)[None, :]
    moves = np.where(j <= i, 2.0 * j - i, np.nan) * sigma.value * np.sqrt(dt)
    match sigma.name:
        case "lognormal" | "proportional":
            nodes = s0 * np.exp(moves)
        case "constant":
            nodes = s0 + moves

    lipschitz_y, _ = lipschitz_bound(rates, "hedger", float(np.nanmax(nodes)))
    if dt * lipschitz_y >= 1:
        raise ValueError(
            f"The time step {dt:.4g} is too long for the rates; increase n_steps."
        )

    def drift(t, s):
        return asset.funding_spread(rates, t, s) * s - asset.kappa(t, s)

    probabilities = _up_probabilities(times, nodes, drift)
    return Lattice(
        times=times,
        nodes=nodes,
        probabilities=probabilities,
        rates=rates,
        asset=asset,
    )


@dataclass(frozen=True, eq=False)
class BackwardSolution:
    """Solution of a backward induction

    Parameters
    ----------
    times : np.ndarray
        Level times
    nodes : np.ndarray
        Asset prices at the nodes, NaN above the diagonal
    prices : np.ndarray
        Contract prices excluding collateral, ``values - collateral``
    values : np.ndarray
        Value state, the price plus collateral
    deltas : np.ndarray
        Hedge ratio of the value state in units of the asset
    collateral : np.ndarray
        Collateral at the nodes
    party : {"hedger", "counterparty"}
        Pricing party
    endowment : float
        Endowment of the party
    form : {"shifted", "discounted"}
        Form of the equation that was solved
    """

    times: np.ndarray
    nodes: np.ndarray
    prices: np.ndarray
    values: np.ndarray
    deltas: np.ndarray
    collateral: np.ndarray
    party: Literal["hedger", "counterparty"]
    endowment: float
    form: Literal["shifted", "discounted"]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def _levels(self, t) -> np.ndarray:
        dt = self.times[1] - self.times[0]
        levels = np.floor(np.asarray(t, dtype=float) / dt + 1e-9)
        return np.clip(levels, 0, self.n_steps).astype(int)

    def _lookup(self, table: np.ndarray, t, s) -> np.ndarray:
        t, s = np.broadcast_arrays(
            np.asarray(t, dtype=float), np.asarray(s, dtype=float)
        )
        out = np.empty(t.shape)
        levels = self._levels(t)
        for i in np.unique(levels):
            mask = levels == i
            out[mask] = np.interp(
                s[mask], self.nodes[i, : i + 1], table[i, : i + 1]
            )
        return out

    def price(self, t, s) -> np.ndarray:
        """Price at the nearest lower level, interpolated linearly across nodes."""
        return self._lookup(self.prices, t, s)

    def delta(self, t, s) -> np.ndarray:
        """Hedge ratio at the nearest lower level, interpolated across nodes."""
        return self._lookup(self.deltas, t, s)

    def bounds(self, t: float) -> tuple[float, float]:
        i = int(self._levels(t))
        return float(self.nodes[i, 0]), float(self.nodes[i, i])

    @property
    def root_price(self) -> float:
        return float(self.prices[0, 0])

    @property
    def root_delta(self) -> float:
        return float(self.deltas[0, 0])

    def to_frame(self) -> pd.DataFrame:
        """Long table of the nodes with columns ``t, level, s, v, dv, c``."""
        i, j = np.nonzero(np.isfinite(self.nodes))
        return pd.DataFrame(
            {
                "t": self.times[i],
                "level": i,
                "s": self.nodes[i, j],
                "v": self.prices[i, j],
                "dv": self.deltas[i, j],
                "c": self.collateral[i, j],
            }
        )


def _check_party(party: str) -> None:
    if party not in ("hedger", "counterparty"):
        raise ValueError(f"Unknown party '{party}'. Use 'hedger' or 'counterparty'.")


def backward_solve(
    lattice: Lattice,
    party: Literal["hedger", "counterparty"],
    endowment: float,
    contract: ContractSpec,
    *,
    implicit: bool = True,
    tol: float = 1e-12,
    max_iter: int = 100,
    form: Literal["shifted", "discounted"] = "shifted",
) -> BackwardSolution:
    """Backward Euler induction of the pricing equation of one party

    At every node the hedge ratio is the slope of the child targets against the
    child prices and the value solves ``y = m - G(t, x, s, y, z) dt``, ``m``
    being the expected child target adjusted by the collateral carried over
    the step at the collateral rate.

    Parameters
    ----------
    lattice : Lattice
        Lattice with the contract maturity
    party : {"hedger", "counterparty"}
        Pricing party
    endowment : float
        Initial cash of the party
    contract : ContractSpec
        Contract, collateral included
    implicit : bool, optional
        Solve the value implicitly by fixed-point iteration; otherwise evaluate
        the driver at ``m``. By default True
    tol : float, optional
        Fixed-point tolerance relative to the largest node value, by default 1e-12
    max_iter : int, optional
        Maximum number of fixed-point iterations per level, by default 100
    form : {"shifted", "discounted"}, optional
        ``shifted`` solves for the value state with the party's own driver under
        the funding measure. ``discounted`` solves for the wealth discounted by
        the account holding the endowment, with the matching discounted driver
        under the lending or borrowing measure. By default "shifted"

    Returns
    -------
    BackwardSolution
    """
    _check_party(party)
    if abs(contract.maturity - lattice.maturity) > 1e-12:
        raise ValueError("The lattice maturity differs from the contract maturity.")
    rates = lattice.rates
    n = lattice.n_steps
    dt = lattice.dt
    times = lattice.times
    x = float(endowment)
    if not np.isfinite(x):
        raise ValueError(f"Endowment must be finite, got {x}.")

    match form:
        case "shifted":
            sign, offset = 1.0, 0.0
            unit = np.ones_like(times)
            probabilities = lattice.probabilities
            party_driver = g_hedger if party == "hedger" else g_counterparty

            def driver(t, s, y, z):
                return party_driver(rates, lattice.asset, t, x, s, y, z)

        case "discounted":
            sign = 1.0 if party == "hedger" else -1.0
            offset = x
            account = "lend" if x >= 0 else "borrow"
            unit = account_value(rates, account, times)
            probabilities = lattice.probabilities_under(account)
            discounted = g_lending if account == "lend" else g_borrowing

            def driver(t, s, y, z):
                return discounted(rates, DriverInput(t, x, s, y, z))

        case _:
            raise ValueError(f"Unknown form '{form}'. Use 'shifted' or 'discounted'.")

    flows = {}
    for flow_time, f in contract.intermediate_flows:
        k = int(np.ceil(flow_time / dt - 1e-9))
        k = min(max(k, 1), n)
        flows[k] = flows.get(k, 0.0) + np.asarray(f(lattice.level(k)), dtype=float)

    collateral = np.full_like(lattice.nodes, np.nan)
    for i in range(n + 1):
        collateral[i, : i + 1] = contract.collateral_value(times[i], lattice.level(i))
    if np.any(np.abs(collateral[n, : n + 1]) > 0):
        raise ValueError("Collateral must vanish at maturity, C(T, s) = 0.")

    state = np.full_like(lattice.nodes, np.nan)
    z_values = np.full_like(lattice.nodes, np.nan)
    terminal = np.asarray(contract.payoff(lattice.level(n)), dtype=float)
    if n in flows:
        terminal = terminal - flows[n]
    state[n, : n + 1] = offset + sign * terminal / unit[n]

    for i in range(n - 1, -1, -1):
        t = times[i]
        s = lattice.level(i)
        target = state[i + 1, : i + 2] - sign * collateral[i + 1, : i + 2] / unit[i + 1]
        children = lattice.level(i + 1)
        p = probabilities[i, : i + 1]
        carried = collateral[i, : i + 1] * (1 + rates.r_c(t) * dt)
        m = p * target[1:] + (1 - p) * target[:-1] + sign * carried / unit[i]
        z = (target[1:] - target[:-1]) / ((children[1:] - children[:-1]) / unit[i + 1])

        if implicit:
            y = m.copy()
            scale = max(1.0, float(np.max(np.abs(m))))
            for iteration in range(1, max_iter + 1):
                updated = m - dt * driver(t, s, y, z)
                change = float(np.max(np.abs(updated - y)))
                y = updated
                if change <= tol * scale:
                    break
            else:
                raise ConvergenceError(
                    f"Fixed-point iteration did not converge at t={t:.6g} "
                    f"(residual {change:.3e}).",
                    residual=change,
                    iterations=iteration,
                    time=t,
                )
        else:
            y = m - dt * driver(t, s, m, z)

        if i in flows:
            y = y - sign * flows[i] / unit[i]
        state[i, : i + 1] = y
        z_values[i, : i + 1] = z

    values = sign * unit[:, None] * (state - offset)
    deltas = sign * z_values
    deltas[n, : n + 1] = np.gradient(
        values[n, : n + 1], lattice.level(n), edge_order=1
    )
    return BackwardSolution(
        times=times,
        nodes=lattice.nodes,
        prices=values - collateral,
        values=values,
        deltas=deltas,
        collateral=collateral,
        party=party,
        endowment=x,
        form=form,
    )


def price_with_collateral(
    lattice: Lattice,
    party: Literal["hedger", "counterparty"],
    endowment: float,
    contract: ContractSpec,
    **kwargs,
) -> float:
    """Price at the root, value state minus the initial collateral

    Keyword arguments are passed to :func:`backward_solve`.
    """
    return backward_solve(lattice, party, endowment, contract, **kwargs).root_price


@dataclass(frozen=True)
class FixedPointReport:
    """Outcome of the full-collateralisation iteration."""

    price: float
    iterations: int
    converged: bool
    change: float

    def to_dict(self) -> dict:
        return {
            "price": self.price,
            "iterations": self.iterations,
            "converged": self.converged,
            "change": self.change,
        }


def _solution_collateral(solution: BackwardSolution, fraction: float) -> Callable:
    maturity = float(solution.times[-1])

    def collateral(t, s):
        t, s = np.broadcast_arrays(
            np.asarray(t, dtype=float), np.asarray(s, dtype=float)
        )
        live = t < maturity - 1e-12
        out = np.zeros(t.shape)
        if live.any():
            out[live] = fraction * solution.price(t[live], s[live])
        return out

    return collateral


def full_collateral_fixed_point(
    lattice: Lattice,
    party: Literal["hedger", "counterparty"],
    endowment: float,
    contract: ContractSpec,
    *,
    fraction: float = 1.0,
    max_iter: int = 50,
    tol: float = 1e-8,
    **kwargs,
) -> FixedPointReport:
    """Iterate the collateral onto the price, ``C <- fraction * v``

    Starts from the uncollateralised price. Keyword arguments are passed to
    :func:`backward_solve`.

    Parameters
    ----------
    lattice : Lattice
        Lattice with the contract maturity
    party : {"hedger", "counterparty"}
        Pricing party
    endowment : float
        Initial cash of the party
    contract : ContractSpec
        Contract whose collateral is replaced
    fraction : float, optional
        Share of the price posted as collateral, by default 1.0
    max_iter : int, optional
        Maximum number of iterations, by default 50
    tol : float, optional
        Sup-norm change of the node prices at which to stop, by default 1e-8

    Returns
    -------
    FixedPointReport
    """
    current = ContractSpec(
        payoff=contract.payoff,
        maturity=contract.maturity,
        initial_flow=contract.initial_flow,
        intermediate_flows=contract.intermediate_flows,
    )
    solution = backward_solve(lattice, party, endowment, current, **kwargs)
    change = np.inf
    for iteration in range(1, max_iter + 1):
        current = ContractSpec(
            payoff=contract.payoff,
            maturity=contract.maturity,
            initial_flow=contract.initial_flow,
            intermediate_flows=contract.intermediate_flows,
            collateral=_solution_collateral(solution, fraction),
        )
        updated = backward_solve(lattice, party, endowment, current, **kwargs)
        change = float(np.nanmax(np.abs(updated.prices - solution.prices)))
        solution = updated
        if change < tol:
            return FixedPointReport(solution.root_price, iteration, True, change)
    return FixedPointReport(solution.root_price, max_iter, False, change)


class LatticeSolver(BaseEstimator):
    """Binomial backward induction of the pricing equation of one party

    Parameters
    ----------
    party : {"hedger", "counterparty"}, optional
        Pricing party, by default "hedger"
    endowment : float, optional
        Initial cash of the party, by default 0.0
    s0 : float, optional
        Spot price at the root, by default 100.0
    n_steps : int, optional
        Number of time steps, by default 500
    implicit : bool, optional
        Solve each node implicitly in the value, by default True
    form : {"shifted", "discounted"}, optional
        Form of the equation, see :func:`backward_solve`. By default "shifted"
    tol : float, optional
        Fixed-point tolerance relative to the largest node value, by default 1e-12
    verbose : bool, optional
        Whether to print progress information, by default False

    Attributes
    ----------
    lattice_ : Lattice
        Asset lattice
    solution_ : BackwardSolution
        Solution on the lattice
    price_ : float
        Root price
    delta_ : float
        Root hedge ratio
    """

    def __init__(
        self,
        party: Literal["hedger", "counterparty"] = "hedger",
        endowment: float = 0.0,
        *,
        s0: float = 100.0,
        n_steps: int = 500,
        implicit: bool = True,
        form: Literal["shifted", "discounted"] = "shifted",
        tol: float = 1e-12,
        verbose: bool = False,
    ):
        self.party = party
        self.endowment = endowment
        self.s0 = s0
        self.n_steps = n_steps
        self.implicit = implicit
        self.form = form
        self.tol = tol
        self.verbose = verbose

    def fit(self, rates: RateModel, asset: AssetModel, contract: ContractSpec):
        """Build the lattice and solve it backwards

        Parameters
        ----------
        rates : RateModel
            Rate model covering the contract maturity
        asset : AssetModel
            Asset dynamics
        contract : ContractSpec
            Contract, collateral included

        Returns
        -------
        self
        """
        self._start = time()
        self.lattice_ = build_lattice(
            asset, rates, self.s0, contract.maturity, self.n_steps
        )
        if self.verbose:
            print(f"{(time() - self._start):.2f}s: Lattice with {self.n_steps} steps")
        self.solution_ = backward_solve(
            self.lattice_,
            self.party,
            self.endowment,
            contract,
            implicit=self.implicit,
            tol=self.tol,
            form=self.form,
        )
        self.price_ = self.solution_.root_price
        self.delta_ = self.solution_.root_delta
        if self.verbose:
            print(
                f"{(time() - self._start):.2f}s: Root price {self.price_:.6f} "
                f"for the {self.party}"
            )
        return self

    def price(self, s: float, t: float = 0.0) -> float:
        check_is_fitted(self, "solution_")
        return float(self.solution_.price(t, s))
