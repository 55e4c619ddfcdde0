from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from time import time
from typing import Literal

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import RegularGridInterpolator
from scipy.linalg import solve_banded
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .drivers import (
    active_rate,
    cash_position,
    endowment_account,
    g_counterparty,
    g_hedger,
)
from .market import AssetModel, ContractSpec, RateModel, account_value

__all__ = [
    "ConvergenceError",
    "FairRange",
    "Grid",
    "PDESolver",
    "PriceSurface",
    "StabilityError",
    "estimate_error",
    "fair_range",
    "girsanov_drift",
    "ordering_gap",
    "solve_counterparty_pde",
    "solve_hedger_pde",
]

# cap on policy iterations once Picard iteration stalls
_POLICY_MAX_ITER = 50


class ConvergenceError(RuntimeError):
    """Nonlinear iteration of a time step did not converge

    Attributes
    ----------
    residual : float
        Sup-norm change of the last iteration
    iterations : int
        Number of iterations performed
    time : float
        Time level of the failing step
    """

    def __init__(self, message: str, residual: float, iterations: int, time: float):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.time = time


class StabilityError(FloatingPointError):
    """Non-finite values appeared in a solution level."""


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid

    Parameters
    ----------
    s_min, s_max : float
        Price bounds
    n_space : int
        Number of price nodes, at least 3
    n_time : int
        Number of time steps, at least 1
    maturity : float
        Maturity ``T`` in years
    """

    s_min: float
    s_max: float
    n_space: int
    n_time: int
    maturity: float

    def __post_init__(self):
        if not (np.isfinite(self.s_min) and np.isfinite(self.s_max)):
            raise ValueError("Grid bounds must be finite.")
        if self.s_min >= self.s_max:
            raise ValueError(
                f"s_min must be below s_max, got {self.s_min} and {self.s_max}."
            )
        if self.n_space < 3:
            raise ValueError(f"n_space must be at least 3, got {self.n_space}.")
        if self.n_time < 1:
            raise ValueError(f"n_time must be at least 1, got {self.n_time}.")
        if not self.maturity > 0:
            raise ValueError(f"Maturity must be positive, got {self.maturity}.")

    @property
    def ds(self) -> float:
        return (self.s_max - self.s_min) / (self.n_space - 1)

    @property
    def dt(self) -> float:
        return self.maturity / self.n_time

    @property
    def s(self) -> np.ndarray:
        return np.linspace(self.s_min, self.s_max, self.n_space)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.maturity, self.n_time + 1)


@dataclass(frozen=True, eq=False)
class PriceSurface:
    """Price and hedge ratio on a grid

    Parameters
    ----------
    values : np.ndarray
        Prices ``v[i, j]`` at ``(t_i, s_j)``
    deltas : np.ndarray
        ``dv/ds`` at ``(t_i, s_j)``, centred in the interior and one-sided at the
        boundaries
    grid : Grid
        Grid of the solution
    party : {"hedger", "counterparty"}
        Pricing party
    endowment : float
        Endowment of the party
    """

    values: np.ndarray
    deltas: np.ndarray
    grid: Grid
    party: Literal["hedger", "counterparty"]
    endowment: float

    @cached_property
    def _value_interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator((self.grid.t, self.grid.s), self.values)

    @cached_property
    def _delta_interpolator(self) -> RegularGridInterpolator:
        return RegularGridInterpolator((self.grid.t, self.grid.s), self.deltas)

    def bounds(self, t: float = 0.0) -> tuple[float, float]:  # noqa: ARG002
        """Price range covered at time ``t``."""
        return self.grid.s_min, self.grid.s_max

    def _lookup(self, interpolator, t, s) -> np.ndarray:
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.grid.maturity)
        s = np.clip(np.asarray(s, dtype=float), self.grid.s_min, self.grid.s_max)
        t, s = np.broadcast_arrays(t, s)
        points = np.column_stack([t.ravel(), s.ravel()])
        return interpolator(points).reshape(t.shape)

    def price(self, t, s) -> np.ndarray:
        """Bilinear interpolation of the price, prices clamped to the grid."""
        return self._lookup(self._value_interpolator, t, s)

    def delta(self, t, s) -> np.ndarray:
        """Bilinear interpolation of the hedge ratio, prices clamped to the grid."""
        return self._lookup(self._delta_interpolator, t, s)

    def to_frame(self) -> pd.DataFrame:
        """Long table with columns ``t, s, v, dv``."""
        n_t, n_s = self.values.shape
        return pd.DataFrame(
            {
                "t": np.repeat(self.grid.t, n_s),
                "s": np.tile(self.grid.s, n_t),
                "v": self.values.ravel(),
                "dv": self.deltas.ravel(),
            }
        )

    def to_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.12g")

    def summary(self, s0: float) -> dict:
        return {
            "party": self.party,
            "endowment": float(self.endowment),
            "spot": float(s0),
            "price": float(self.price(0.0, s0)),
            "delta": float(self.delta(0.0, s0)),
            "grid": asdict(self.grid),
        }


def _bands(
    diffusion: np.ndarray, drift: np.ndarray, rho: np.ndarray, dt: float, ds: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Bands of ``I - dt (1/2 sigma^2 D2 - drift D1) + dt rho``

    Central first differences, replaced by the upwind side on nodes where they
    would break the discrete maximum principle.
    """
    c = dt * drift / (2 * ds)
    lower = -diffusion - c
    upper = -diffusion + c
    diag = 1 + 2 * diffusion + dt * rho
    upwind = diffusion < np.abs(c)
    forward = upwind & (drift < 0)
    backward = upwind & (drift >= 0)
    lower = np.where(
        forward, -diffusion, np.where(backward, -diffusion - 2 * c, lower)
    )
    upper = np.where(
        forward, -diffusion + 2 * c, np.where(backward, -diffusion, upper)
    )
    diag = np.where(forward, diag - 2 * c, np.where(backward, diag + 2 * c, diag))
    return lower, diag, upper, int(upwind[1:-1].sum())


def _solve_tridiagonal(
    lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray
) -> np.ndarray:
    """Solve with a Dirichlet first row and a linear extrapolation last row."""
    n = diag.size
    lower, diag, upper = lower.copy(), diag.copy(), upper.copy()
    diag[0], upper[0] = 1.0, 0.0
    # v[n-1] = 2 v[n-2] - v[n-3] folded into the row of node n-2
    lower[n - 2] -= upper[n - 2]
    diag[n - 2] += 2 * upper[n - 2]
    m = n - 1
    ab = np.zeros((3, m))
    ab[0, 1:] = upper[: m - 1]
    ab[1] = diag[:m]
    ab[2, :-1] = lower[1:m]
    v = np.empty(n)
    v[:m] = solve_banded((1, 1), ab, rhs[:m], check_finite=False)
    v[m] = 2 * v[m - 1] - v[m - 2]
    return v


class PDESolver(BaseEstimator):
    """Finite-difference solver of the pricing equation of one party

    Solves ``v_t + 1/2 sigma^2 v_ss = kappa v_s + f(t, s, v, v_s)`` backwards from
    ``v(T, s) = H(s)``, where ``f`` is the party's driver net of the funding-spread
    term. Diffusion is implicit, the nonlinear source is iterated per time step
    by Picard iteration with a policy-iteration fallback.

    The upper price boundary imposes ``v_ss = 0``. The lower boundary is the
    value of the linear extension ``a + b s`` of the payoff, the cash part ``a``
    discounted at the lending or borrowing rate depending on which side the
    party finances, the stock part carried at the dividend yield. The endowment
    is ignored at the lower boundary.

    Parameters
    ----------
    party : {"hedger", "counterparty"}, optional
        Pricing party, by default "hedger"
    endowment : float, optional
        Initial cash of the party, by default 0.0
    n_space : int, optional
        Number of price nodes, by default 400
    n_time : int, optional
        Number of time steps, by default 500
    s_min : float, optional
        Lower price bound, by default 10.0
    s_max : float, optional
        Upper price bound, by default 400.0
    max_iter : int, optional
        Maximum number of Picard iterations per step, by default 20
    tol : float, optional
        Sup-norm change at which the iteration stops, by default 1e-10
    fallback : bool, optional
        Switch to policy iteration when Picard iteration stalls instead of
        raising :class:`ConvergenceError`, by default True
    verbose : bool, optional
        Whether to print progress information, by default False

    Attributes
    ----------
    surface_ : PriceSurface
        Price and hedge ratio surface
    iterations_ : pd.Series
        Nonlinear iterations used at each time level
    fallback_steps_ : int
        Number of steps solved by policy iteration
    residual_ : pd.Series
        Final sup-norm change at each time level
    upwind_nodes_ : int
        Number of node-steps discretised with upwind differences
    """

    def __init__(
        self,
        party: Literal["hedger", "counterparty"] = "hedger",
        endowment: float = 0.0,
        *,
        n_space: int = 400,
        n_time: int = 500,
        s_min: float = 10.0,
        s_max: float = 400.0,
        max_iter: int = 20,
        tol: float = 1e-10,
        fallback: bool = True,
        verbose: bool = False,
    ):
        self.party = party
        self.endowment = endowment
        self.n_space = n_space
        self.n_time = n_time
        self.s_min = s_min
        self.s_max = s_max
        self.max_iter = max_iter
        self.tol = tol
        self.fallback = fallback
        self.verbose = verbose

    def _flows(self, contract: ContractSpec, grid: Grid) -> dict[int, np.ndarray]:
        """Intermediate flows keyed by the first time level at or after them"""
        flows = {}
        s = grid.s
        for flow_time, f in contract.intermediate_flows:
            k = int(np.ceil(flow_time / grid.dt - 1e-9))
            k = min(max(k, 1), grid.n_time)
            flows[k] = flows.get(k, 0.0) + np.asarray(f(s), dtype=float)
        return flows

    def _boundary(
        self,
        rates: RateModel,
        asset: AssetModel,
        terminal: np.ndarray,
        flows: dict[int, np.ndarray],
        grid: Grid,
    ) -> np.ndarray:
        """Dirichlet values at ``s_min`` for every time level, excluding flows"""
        s0 = grid.s[0]
        times = grid.t
        slope = (terminal[1] - terminal[0]) / grid.ds
        cash = terminal[0] - slope * s0
        if s0 > 0:
            dividend_yield = np.asarray(asset.kappa(times, s0), dtype=float) / s0
            accrued = cumulative_trapezoid(
                np.broadcast_to(dividend_yield, times.shape), times, initial=0.0
            )
            carry = np.exp(-(accrued[-1] - accrued))
        else:
            carry = np.ones_like(times)

        values = np.empty_like(times)
        values[-1] = cash
        for i in range(grid.n_time - 1, -1, -1):
            following = values[i + 1]
            if i + 1 < grid.n_time and i + 1 in flows:
                following = following - flows[i + 1][0]
            # the party lends when it must deliver, borrows when it receives
            lends = following >= 0 if self.party == "hedger" else following < 0
            which = "lend" if lends else "borrow"
            values[i] = following / account_value(
                rates, which, times[i + 1], t0=times[i]
            )
        return values + slope * s0 * carry

    def _step(
        self,
        rates: RateModel,
        asset: AssetModel,
        grid: Grid,
        t: float,
        following: np.ndarray,
        boundary: float,
    ) -> tuple[np.ndarray, int, bool, float, int]:
        """Advance one time level backwards"""
        s = grid.s
        dt, ds = grid.dt, grid.ds
        x = float(self.endowment)
        diffusion = 0.5 * np.asarray(asset.sigma(t, s), dtype=float) ** 2 * dt / ds**2
        kappa = np.asarray(asset.kappa(t, s), dtype=float) + np.zeros_like(s)
        spread = asset.funding_spread(rates, t, s)
        driver = g_hedger if self.party == "hedger" else g_counterparty

        def source(v):
            z = np.gradient(v, ds)
            return driver(rates, asset, t, x, s, v, z) - z * spread * s

        lower, diag, upper, upwind = _bands(diffusion, kappa, np.zeros_like(s), dt, ds)
        v = following.copy()
        change = np.inf
        for iteration in range(1, self.max_iter + 1):
            rhs = following - dt * source(v)
            rhs[0] = boundary
            updated = _solve_tridiagonal(lower, diag, upper, rhs)
            if not np.isfinite(updated).all():
                raise StabilityError(
                    f"Non-finite values in the solution at t={t:.6g}."
                )
            change = float(np.max(np.abs(updated - v)))
            v = updated
            if change < self.tol:
                return v, iteration, False, change, upwind

        if not self.fallback:
            raise ConvergenceError(
                f"Picard iteration did not converge at t={t:.6g} "
                f"after {self.max_iter} iterations (residual {change:.3e}).",
                residual=change,
                iterations=self.max_iter,
                time=t,
            )

        # policy iteration: freeze the funding branch, solve the linear system
        sign = 1.0 if self.party == "hedger" else -1.0
        endowment_rate, endowment_unit = endowment_account(rates, t, x)
        for iteration in range(1, _POLICY_MAX_ITER + 1):
            z = np.gradient(v, ds)
            rho = active_rate(
                rates, t, cash_position(self.party, rates, t, x, s, v, z)
            )
            lower, diag, upper, upwind = _bands(diffusion, kappa - rho * s, rho, dt, ds)
            rhs = following - dt * sign * (rho - endowment_rate) * x * endowment_unit
            rhs[0] = boundary
            updated = _solve_tridiagonal(lower, diag, upper, rhs)
            change = float(np.max(np.abs(updated - v)))
            v = updated
            z = np.gradient(v, ds)
            settled = np.array_equal(
                rho,
                active_rate(rates, t, cash_position(self.party, rates, t, x, s, v, z)),
            )
            if change < self.tol or settled:
                return v, self.max_iter + iteration, True, change, upwind

        raise ConvergenceError(
            f"Policy iteration did not converge at t={t:.6g} "
            f"(residual {change:.3e}).",
            residual=change,
            iterations=self.max_iter + _POLICY_MAX_ITER,
            time=t,
        )

    def fit(self, rates: RateModel, asset: AssetModel, contract: ContractSpec):
        """Solve the pricing equation

        Parameters
        ----------
        rates : RateModel
            Rate model covering the contract maturity
        asset : AssetModel
            Asset dynamics
        contract : ContractSpec
            Uncollateralised contract

        Returns
        -------
        self
        """
        self._start = time()
        if self.party not in ("hedger", "counterparty"):
            raise ValueError(
                f"Unknown party '{self.party}'. Use 'hedger' or 'counterparty'."
            )
        if contract.is_collateralized:
            raise ValueError(
                "The PDE engine prices uncollateralised contracts only. "
                "Use the lattice solver for contracts with collateral."
            )
        if contract.maturity > rates.maturity + 1e-12:
            raise ValueError("The rate model does not cover the contract maturity.")
        if not np.isfinite(self.endowment):
            raise ValueError(f"Endowment must be finite, got {self.endowment}.")

        grid = Grid(
            s_min=self.s_min,
            s_max=self.s_max,
            n_space=self.n_space,
            n_time=self.n_time,
            maturity=contract.maturity,
        )
        asset.validate(rates, grid.s, grid.t)
        times = grid.t

        if self.verbose:
            print(
                f"{(time() - self._start):.2f}s: Solving the {self.party} equation "
                f"on {grid.n_space}x{grid.n_time} nodes"
            )

        flows = self._flows(contract, grid)
        values = np.empty((grid.n_time + 1, grid.n_space))
        values[-1] = np.asarray(contract.payoff(grid.s), dtype=float)
        if grid.n_time in flows:
            values[-1] -= flows[grid.n_time]
        if not np.isfinite(values[-1]).all():
            raise StabilityError("Non-finite values in the terminal condition.")
        boundary = self._boundary(rates, asset, values[-1], flows, grid)

        iterations = np.zeros(grid.n_time, dtype=int)
        residuals = np.zeros(grid.n_time)
        fallback_steps = 0
        upwind_nodes = 0
        for i in range(grid.n_time - 1, -1, -1):
            v, n_iter, used_fallback, change, upwind = self._step(
                rates, asset, grid, times[i], values[i + 1], boundary[i]
            )
            if i in flows:
                v = v - flows[i]
            if not np.isfinite(v).all():
                raise StabilityError(
                    f"Non-finite values in the solution at t={times[i]:.6g}."
                )
            values[i] = v
            iterations[i] = n_iter
            residuals[i] = change
            fallback_steps += used_fallback
            upwind_nodes += upwind

        if self.verbose:
            print(
                f"{(time() - self._start):.2f}s: Solved with "
                f"{iterations.sum()} iterations, {fallback_steps} fallback steps"
            )

        index = pd.Index(times[:-1], name="t")
        self.surface_ = PriceSurface(
            values=values,
            deltas=np.gradient(values, grid.ds, axis=1),
            grid=grid,
            party=self.party,
            endowment=float(self.endowment),
        )
        self.iterations_ = pd.Series(iterations, index=index, name="iterations")
        self.residual_ = pd.Series(residuals, index=index, name="residual")
        self.fallback_steps_ = fallback_steps
        self.upwind_nodes_ = upwind_nodes
        return self

    def price(self, s0: float, t: float = 0.0) -> float:
        check_is_fitted(self, "surface_")
        return float(self.surface_.price(t, s0))

    def diagnostics(self) -> dict:
        """Convergence diagnostics of the last fit."""
        check_is_fitted(self, "surface_")
        return {
            "iterations_total": int(self.iterations_.sum()),
            "iterations_max": int(self.iterations_.max()),
            "residual_max": float(self.residual_.max()),
            "fallback_steps": int(self.fallback_steps_),
            "upwind_nodes": int(self.upwind_nodes_),
        }


def _solve(
    party: str,
    rates: RateModel,
    asset: AssetModel,
    contract: ContractSpec,
    x: float,
    grid: Grid,
    **kwargs,
) -> PriceSurface:
    if abs(grid.maturity - contract.maturity) > 1e-12:
        raise ValueError("The grid maturity differs from the contract maturity.")
    solver = PDESolver(
        party=party,
        endowment=float(x),
        n_space=grid.n_space,
        n_time=grid.n_time,
        s_min=grid.s_min,
        s_max=grid.s_max,
        **kwargs,
    )
    return solver.fit(rates, asset, contract).surface_


def solve_hedger_pde(
    rates: RateModel,
    asset: AssetModel,
    contract: ContractSpec,
    x: float,
    grid: Grid,
    **kwargs,
) -> PriceSurface:
    """Hedger's price surface, see :class:`PDESolver` for keyword arguments."""
    return _solve("hedger", rates, asset, contract, x, grid, **kwargs)


def solve_counterparty_pde(
    rates: RateModel,
    asset: AssetModel,
    contract: ContractSpec,
    x: float,
    grid: Grid,
    **kwargs,
) -> PriceSurface:
    """Counterparty's price surface, see :class:`PDESolver` for keyword arguments."""
    return _solve("counterparty", rates, asset, contract, x, grid, **kwargs)


@dataclass(frozen=True)
class FairRange:
    """Range ``[low, high]`` of fair bilateral prices

    ``low`` is the counterparty's price and ``high`` the hedger's. The range is
    empty when ``low`` exceeds ``high`` by more than ``tolerance``.
    """

    low: float
    high: float
    tolerance: float

    @property
    def width(self) -> float:
        return self.high - self.low

    @property
    def empty(self) -> bool:
        return self.low > self.high + self.tolerance

    def to_dict(self) -> dict:
        return {
            "low": self.low,
            "high": self.high,
            "width": self.width,
            "tolerance": self.tolerance,
            "empty": self.empty,
        }


def _check_pair(hedger: PriceSurface, counterparty: PriceSurface) -> None:
    if hedger.grid != counterparty.grid:
        raise ValueError("Both surfaces must share the same grid.")
    if hedger.party != "hedger" or counterparty.party != "counterparty":
        raise ValueError("Expected a hedger surface and a counterparty surface.")


def fair_range(
    hedger: PriceSurface,
    counterparty: PriceSurface,
    t: float,
    s: float,
    error: float = 0.0,
) -> FairRange:
    """Fair bilateral price range at ``(t, s)``

    Parameters
    ----------
    hedger : PriceSurface
        Hedger's surface
    counterparty : PriceSurface
        Counterparty's surface on the same grid
    t, s : float
        Time and price
    error : float, optional
        Discretisation error estimate added to the ``1e-8`` tolerance,
        by default 0.0
    """
    _check_pair(hedger, counterparty)
    return FairRange(
        low=float(counterparty.price(t, s)),
        high=float(hedger.price(t, s)),
        tolerance=1e-8 + float(error),
    )


def ordering_gap(hedger: PriceSurface, counterparty: PriceSurface) -> float:
    """Largest excess of the counterparty's price over the hedger's on the grid."""
    _check_pair(hedger, counterparty)
    return float(np.max(counterparty.values - hedger.values))


def estimate_error(coarse: PriceSurface, fine: PriceSurface, order: int = 1) -> float:
    """Richardson estimate of the discretisation error of ``fine``

    The fine surface is interpolated to the coarse nodes; the largest difference
    is scaled by ``1 / (2**order - 1)``.
    """
    if (coarse.grid.s_min, coarse.grid.s_max, coarse.grid.maturity) != (
        fine.grid.s_min,
        fine.grid.s_max,
        fine.grid.maturity,
    ):
        raise ValueError("Surfaces must cover the same domain.")
    tt, ss = np.meshgrid(coarse.grid.t, coarse.grid.s, indexing="ij")
    difference = fine.price(tt, ss) - coarse.values
    return float(np.max(np.abs(difference)) / (2**order - 1))


def girsanov_drift(
    asset: AssetModel,
    rates: RateModel,
    t,
    s,
    funding_rate=None,
) -> np.ndarray:
    """Market price of risk ``(mu + kappa - beta s) / sigma``

    Parameters
    ----------
    asset : AssetModel
        Asset dynamics
    rates : RateModel
        Rate model, used when the asset has no explicit funding spread
    t, s : float | np.ndarray
        Time and price
    funding_rate : float | np.ndarray | None, optional
        Rate replacing ``beta``, e.g. the lending rate for the lending measure.
        By default None
    """
    sigma = np.asarray(asset.sigma(t, s), dtype=float)
    if np.any(np.abs(sigma) < 1e-10):
        raise ValueError("Volatility is singular, the drift change is undefined.")
    if funding_rate is None:
        beta = asset.funding_spread(rates, t, s)
    else:
        beta = np.asarray(funding_rate, dtype=float)
    mu = np.asarray(asset.mu(t, s), dtype=float)
    kappa = np.asarray(asset.kappa(t, s), dtype=float)
    return (mu + kappa - beta * np.asarray(s, dtype=float)) / sigma
