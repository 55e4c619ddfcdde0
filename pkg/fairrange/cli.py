"""Command-line front end: ``fairrange price|crosscheck|hedge|sweep CONFIG``."""

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import ValidationError
from sklearn.base import clone

from .analytic import black_scholes
from .config import RunConfig
from .hedging import netted_wealth_check, replicate, simulate_paths
from .lattice import LatticeSolver
from .pde import (
    ConvergenceError,
    FairRange,
    PDESolver,
    StabilityError,
    estimate_error,
    fair_range,
    ordering_gap,
)

__all__ = ["cmd_crosscheck", "cmd_hedge", "cmd_price", "cmd_sweep", "main"]

# exit code for an empty fair range, a crosscheck breach or an arbitrage flag
EXIT_CHECK_FAILED = 2


def _significant(value):
    """Round floats in a report to 12 significant digits"""
    match value:
        case dict():
            return {key: _significant(item) for key, item in value.items()}
        case list() | tuple():
            return [_significant(item) for item in value]
        case bool() | np.bool_():
            return bool(value)
        case int() | np.integer():
            return int(value)
        case float() | np.floating():
            return float(f"{float(value):.12g}")
    return value


def _pde_solver(config: RunConfig, party: str, x: float, scale: int = 1) -> PDESolver:
    s_min, s_max = config.grid_bounds
    return PDESolver(
        party=party,
        endowment=x,
        n_space=max(3, config.solver.n_space // scale),
        n_time=max(1, config.solver.n_time // scale),
        s_min=s_min,
        s_max=s_max,
    )


def _lattice_solver(config: RunConfig, party: str, x: float, scale: int = 1):
    return LatticeSolver(
        party=party,
        endowment=x,
        s0=config.spot,
        n_steps=max(1, config.solver.tree_steps // scale),
        implicit=config.solver.implicit,
    )


def _fit(solver, rates, asset, contract):
    return solver.fit(rates, asset, contract)


def _pde_section(config: RunConfig, n_jobs: int) -> tuple[dict, FairRange]:
    rates = config.build_rates()
    asset = config.build_asset()
    contract = config.build_contract()
    x1, x2 = config.endowments.x1, config.endowments.x2
    solvers = [
        _pde_solver(config, "hedger", x1),
        _pde_solver(config, "counterparty", x2),
        _pde_solver(config, "hedger", x1, scale=2),
        _pde_solver(config, "counterparty", x2, scale=2),
    ]
    hedger, counterparty, coarse_h, coarse_c = Parallel(n_jobs=n_jobs)(
        delayed(_fit)(solver, rates, asset, contract) for solver in solvers
    )
    error = max(
        estimate_error(coarse_h.surface_, hedger.surface_),
        estimate_error(coarse_c.surface_, counterparty.surface_),
    )
    bilateral = fair_range(
        hedger.surface_, counterparty.surface_, 0.0, config.spot, error=error
    )
    section = {
        "hedger": hedger.surface_.summary(config.spot) | hedger.diagnostics(),
        "counterparty": counterparty.surface_.summary(config.spot)
        | counterparty.diagnostics(),
        "error_estimate": error,
        "ordering_gap": ordering_gap(hedger.surface_, counterparty.surface_),
        "fair_range": bilateral.to_dict(),
    }
    return section, bilateral


def _tree_section(config: RunConfig, n_jobs: int) -> tuple[dict, FairRange]:
    rates = config.build_rates()
    asset = config.build_asset()
    contract = config.build_contract()
    x1, x2 = config.endowments.x1, config.endowments.x2
    solvers = [
        _lattice_solver(config, "hedger", x1),
        _lattice_solver(config, "counterparty", x2),
        _lattice_solver(config, "hedger", x1, scale=2),
        _lattice_solver(config, "counterparty", x2, scale=2),
    ]
    hedger, counterparty, coarse_h, coarse_c = Parallel(n_jobs=n_jobs)(
        delayed(_fit)(solver, rates, asset, contract) for solver in solvers
    )
    error = max(
        abs(hedger.price_ - coarse_h.price_),
        abs(counterparty.price_ - coarse_c.price_),
    )
    bilateral = FairRange(
        low=counterparty.price_, high=hedger.price_, tolerance=1e-8 + error
    )
    section = {
        "hedger": {"price": hedger.price_, "delta": hedger.delta_},
        "counterparty": {"price": counterparty.price_, "delta": counterparty.delta_},
        "n_steps": config.solver.tree_steps,
        "error_estimate": error,
        "fair_range": bilateral.to_dict(),
    }
    return section, bilateral


def cmd_price(config: RunConfig, *, n_jobs: int = 1) -> dict:
    """Prices of both parties, hedge ratios at spot and the fair range

    Collateralised contracts are priced on the lattice only. The headline
    ``fair_range`` comes from the first requested method.
    """
    methods = list(dict.fromkeys(config.solver.methods))
    if config.build_contract().is_collateralized:
        methods = ["tree"]
    report = {"command": "price", "config": config.model_dump(mode="json")}
    headline = None
    for method in methods:
        build = _pde_section if method == "pde" else _tree_section
        section, bilateral = build(config, n_jobs)
        report[method] = section
        headline = headline or bilateral
    report["fair_range"] = headline.to_dict()
    return report


def _bs_reference(config: RunConfig) -> float | None:
    """Black-Scholes price when the market collapses to a single rate"""
    rates = config.build_rates()
    asset, contract = config.asset, config.contract
    single_rate = (
        rates.equal
        and len(config.rates.r_l) == 1
        and asset.sigma.form in ("lognormal", "proportional")
        and asset.kappa.form in ("constant", "proportional")
        and contract.payoff in ("call", "put")
        and (asset.beta is None or asset.beta.form == "constant")
    )
    if not single_rate:
        return None
    rate = config.rates.r_l[0][1]
    if asset.beta is not None and asset.beta.value != rate:
        return None
    dividend_yield = asset.kappa.value if asset.kappa.form == "proportional" else 0.0
    if asset.kappa.form == "constant" and asset.kappa.value != 0:
        return None
    return float(
        black_scholes(
            config.spot,
            contract.strikes[0],
            contract.maturity,
            rate,
            asset.sigma.value,
            dividend_yield=dividend_yield,
            kind=contract.payoff,
        )
    )


def cmd_crosscheck(config: RunConfig, *, n_jobs: int = 1) -> dict:
    """Agreement of the finite-difference and lattice prices at spot

    The tolerance is the larger of 0.5% of the lattice price and 0.02.
    """
    rates = config.build_rates()
    asset = config.build_asset()
    contract = config.build_contract()
    if contract.is_collateralized:
        raise ValueError("The crosscheck needs an uncollateralised contract.")
    parties = [("hedger", config.endowments.x1), ("counterparty", config.endowments.x2)]
    solvers = [_pde_solver(config, p, x) for p, x in parties] + [
        _lattice_solver(config, p, x) for p, x in parties
    ]
    fitted = Parallel(n_jobs=n_jobs)(
        delayed(_fit)(solver, rates, asset, contract) for solver in solvers
    )
    reference = _bs_reference(config)
    rows = []
    for (party, x), pde, tree in zip(parties, fitted[:2], fitted[2:], strict=True):
        pde_price = pde.price(config.spot)
        tolerance = max(0.005 * abs(tree.price_), 0.02)
        row = {
            "party": party,
            "endowment": x,
            "pde": pde_price,
            "tree": tree.price_,
            "difference": pde_price - tree.price_,
            "tolerance": tolerance,
            "passed": abs(pde_price - tree.price_) <= tolerance,
        }
        if reference is not None:
            row["black_scholes"] = reference
        rows.append(row)
    return {
        "command": "crosscheck",
        "config": config.model_dump(mode="json"),
        "rows": rows,
        "passed": all(row["passed"] for row in rows),
    }


def cmd_hedge(
    config: RunConfig,
    *,
    strict: bool | None = None,
    n_jobs: int = 1,
    out: Path | None = None,
) -> dict:
    """Replicate the hedger's sale and test it for arbitrage

    The strategy comes from the finite-difference surface, or from the lattice
    when the contract is collateralised. Paths are drawn under the physical
    measure for replication and under the lending measure for the netted
    wealth test, which runs only for non-negative endowments.
    """
    rates = config.build_rates()
    asset = config.build_asset()
    contract = config.build_contract()
    x = config.endowments.x1
    if contract.is_collateralized:
        model = _lattice_solver(config, "hedger", x).fit(rates, asset, contract)
        model = model.solution_
    else:
        model = _pde_solver(config, "hedger", x).fit(rates, asset, contract)
        model = model.surface_

    simulation = config.simulation
    paths = simulate_paths(
        asset,
        config.spot,
        contract.maturity,
        simulation.n_steps,
        simulation.n_paths,
        simulation.seed,
        rates=rates,
        n_jobs=n_jobs,
    )
    dump = min(config.output.dump_paths, simulation.n_paths)
    result = replicate(
        model,
        rates,
        contract,
        x,
        paths,
        asset=asset,
        keep_paths=dump > 0,
        strict=strict,
    )
    report = {
        "command": "hedge",
        "config": config.model_dump(mode="json"),
        "replication": result.summary().to_dict(),
    }
    if x >= 0:
        netted = netted_wealth_check(
            model,
            rates,
            asset,
            contract,
            x,
            config.spot,
            n_paths=simulation.n_paths,
            n_steps=simulation.n_steps,
            seed=simulation.seed,
            batch_size=simulation.batch_size,
            n_jobs=n_jobs,
        )
        report["netted_wealth"] = netted.to_series().to_dict()
    else:
        report["netted_wealth"] = None

    if dump and out is not None:
        for i in range(dump):
            result.to_frame(i).to_csv(
                out / f"hedge_path_{i}.csv", index=False, float_format="%.12g"
            )
    return report


def _sweep_point(hedger, counterparty, config: RunConfig) -> dict:
    rates = config.build_rates()
    asset = config.build_asset()
    contract = config.build_contract()
    hedger = hedger.fit(rates, asset, contract)
    counterparty = counterparty.fit(rates, asset, contract)
    bilateral = fair_range(hedger.surface_, counterparty.surface_, 0.0, config.spot)
    return {
        "hedger_price": bilateral.high,
        "counterparty_price": bilateral.low,
        "width": bilateral.width,
        "empty": bilateral.empty,
        "hedger_delta": float(hedger.surface_.delta(0.0, config.spot)),
        "counterparty_delta": float(counterparty.surface_.delta(0.0, config.spot)),
    }


def cmd_sweep(
    config: RunConfig,
    axis: str,
    values: list[float],
    *,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """Prices of both parties along one axis of the configuration

    Parameters
    ----------
    config : RunConfig
        Base configuration
    axis : {"x1", "x2", "spot", "rate-spread"}
        ``x1`` and ``x2`` vary the endowments, ``spot`` the initial price and
        ``rate-spread`` the borrowing rate as a spread over the lending rate
    values : list[float]
        Sweep points
    n_jobs : int, optional
        Number of points solved in parallel, by default 1

    Returns
    -------
    pd.DataFrame
        One row per point
    """
    if config.build_contract().is_collateralized:
        raise ValueError("The sweep needs an uncollateralised contract.")
    base_h = _pde_solver(config, "hedger", config.endowments.x1)
    base_c = _pde_solver(config, "counterparty", config.endowments.x2)
    points = []
    for value in values:
        hedger, counterparty = clone(base_h), clone(base_c)
        point = config
        match axis:
            case "x1":
                hedger.set_params(endowment=value)
                point = config.with_overrides(endowments={"x1": value})
            case "x2":
                counterparty.set_params(endowment=value)
                point = config.with_overrides(endowments={"x2": value})
            case "spot":
                point = config.with_overrides(spot=value)
                s_min, s_max = point.grid_bounds
                hedger.set_params(s_min=s_min, s_max=s_max)
                counterparty.set_params(s_min=s_min, s_max=s_max)
            case "rate-spread":
                spread = [(t, r + value) for t, r in config.rates.r_l]
                point = config.with_overrides(
                    rates={"r_b": spread, "r_c": config.rates.r_c or config.rates.r_l}
                )
            case _:
                raise ValueError(f"Unknown sweep axis '{axis}'.")
        points.append((hedger, counterparty, point))

    rows = Parallel(n_jobs=n_jobs)(
        delayed(_sweep_point)(hedger, counterparty, point)
        for hedger, counterparty, point in points
    )
    table = pd.DataFrame(rows)
    table.insert(0, axis, values)
    return table


def _grid(text: str) -> tuple[int, int]:
    try:
        n_space, n_time = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected NxM, e.g. 400x400, got '{text}'"
        ) from None
    return n_space, n_time


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="path of the JSON run configuration")
    common.add_argument("--grid", type=_grid, help="PDE grid as NxM")
    common.add_argument("--tree-steps", type=int, help="lattice time steps")
    common.add_argument("--paths", type=int, help="number of simulated paths")
    common.add_argument("--seed", type=int, help="seed of the path generator")
    common.add_argument("--out", type=Path, help="directory for reports")
    common.add_argument("--n-jobs", type=int, default=1, help="parallel jobs")
    common.add_argument(
        "--strict", action="store_true", help="turn soft warnings into failures"
    )

    parser = argparse.ArgumentParser(
        prog="fairrange",
        description="Bilateral pricing and hedging under differential rates.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    price = commands.add_parser("price", parents=[common], help="price both parties")
    price.add_argument(
        "--require-nonempty-range",
        action="store_true",
        help="exit with 2 when the fair range is empty",
    )
    commands.add_parser(
        "crosscheck", parents=[common], help="compare the PDE and lattice solvers"
    )
    hedge = commands.add_parser(
        "hedge", parents=[common], help="simulate the replicating strategy"
    )
    hedge.add_argument(
        "--dump-paths", type=int, help="number of per-path CSV tables to write"
    )
    sweep = commands.add_parser("sweep", parents=[common], help="sweep one input")
    sweep.add_argument(
        "--axis", required=True, choices=["x1", "x2", "spot", "rate-spread"]
    )
    sweep.add_argument("--values", required=True, type=float, nargs="+")
    return parser


def _apply_flags(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    solver, simulation, output = {}, {}, {}
    if args.grid is not None:
        solver["n_space"], solver["n_time"] = args.grid
    if args.tree_steps is not None:
        solver["tree_steps"] = args.tree_steps
    if args.paths is not None:
        simulation["n_paths"] = args.paths
    if args.seed is not None:
        simulation["seed"] = args.seed
    if args.out is not None:
        output["directory"] = str(args.out)
    if getattr(args, "dump_paths", None) is not None:
        output["dump_paths"] = args.dump_paths
    return config.with_overrides(solver=solver, simulation=simulation, output=output)


def _emit(report: dict, out: Path | None, name: str) -> None:
    text = json.dumps(_significant(report), indent=2)
    print(text)
    if out is not None:
        (out / f"{name}.json").write_text(text + "\n")


def main(argv: list[str] | None = None) -> int:
    """Run the command line and return the exit code."""
    args = _parser().parse_args(argv)
    strict = True if args.strict else None
    try:
        config = _apply_flags(RunConfig.from_json(args.config), args)
        out = None
        if config.output.directory is not None:
            out = Path(config.output.directory)
            out.mkdir(parents=True, exist_ok=True)

        match args.command:
            case "price":
                report = cmd_price(config, n_jobs=args.n_jobs)
                _emit(report, out, "price")
                if report["fair_range"]["empty"]:
                    if args.require_nonempty_range:
                        return EXIT_CHECK_FAILED
                    warnings.warn("The fair price range is empty.", stacklevel=2)
            case "crosscheck":
                report = cmd_crosscheck(config, n_jobs=args.n_jobs)
                _emit(report, out, "crosscheck")
                if not report["passed"]:
                    return EXIT_CHECK_FAILED
            case "hedge":
                report = cmd_hedge(config, strict=strict, n_jobs=args.n_jobs, out=out)
                _emit(report, out, "hedge")
                netted = report["netted_wealth"]
                if strict and netted is not None and netted["arbitrage"]:
                    return EXIT_CHECK_FAILED
            case "sweep":
                table = cmd_sweep(config, args.axis, args.values, n_jobs=args.n_jobs)
                print(table.to_csv(index=False, float_format="%.12g"), end="")
                if out is not None:
                    table.to_csv(out / "sweep.csv", index=False, float_format="%.12g")
    except ValidationError as error:
        for item in error.errors():
            location = ".".join(str(part) for part in item["loc"]) or "config"
            print(f"{location}: {item['msg']}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ConvergenceError, StabilityError) as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
