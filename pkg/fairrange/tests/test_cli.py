import io
import json
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pandas as pd
import pytest

from fairrange.analytic import black_scholes
from fairrange.cli import EXIT_CHECK_FAILED, cmd_price, main
from fairrange.config import RunConfig
from fairrange.pde import ConvergenceError, StabilityError


def _document(**sections) -> dict:
    document = {
        "rates": {"r_l": [[0.0, 0.02]], "r_b": [[0.0, 0.05]]},
        "asset": {
            "mu": {"form": "proportional", "value": 0.05},
            "sigma": {"form": "lognormal", "value": 0.2},
        },
        "contract": {"payoff": "call", "strikes": [100.0], "maturity": 1.0},
        "solver": {"n_space": 101, "n_time": 50, "tree_steps": 100},
        "simulation": {"n_paths": 200, "n_steps": 20},
    }
    for section, values in sections.items():
        document[section] = document.get(section, {}) | values
    return document


def _write(tmp_path, document) -> str:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(document))
    return str(path)


def _run(argv: list[str]) -> tuple[int, str, str]:
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def test_price(tmp_path):
    """Test pricing writes the report and finds a non-empty range."""
    path = _write(tmp_path, _document())
    out = tmp_path / "reports"

    code, stdout, _ = _run(["price", path, "--out", str(out)])

    assert code == 0
    report = json.loads((out / "price.json").read_text())
    assert json.loads(stdout) == report
    assert report["command"] == "price"
    fair = report["fair_range"]
    assert fair["low"] < fair["high"]
    assert not fair["empty"]
    assert report["pde"]["hedger"]["price"] == fair["high"]
    assert report["pde"]["counterparty"]["price"] == fair["low"]
    assert report["pde"]["error_estimate"] > 0
    assert report["config"]["solver"]["n_space"] == 101


def test_price_grid_flag(tmp_path):
    """Test the grid flag overrides the configuration."""
    path = _write(tmp_path, _document())

    code, stdout, _ = _run(["price", path, "--grid", "51x25"])

    assert code == 0
    report = json.loads(stdout)
    assert report["config"]["solver"]["n_space"] == 51
    assert report["config"]["solver"]["n_time"] == 25


def test_price_both_methods(tmp_path):
    """Test the lattice section is added on request."""
    path = _write(tmp_path, _document(solver={"methods": ["pde", "tree"]}))

    code, stdout, _ = _run(["price", path])

    assert code == 0
    report = json.loads(stdout)
    assert report["fair_range"] == report["pde"]["fair_range"]
    assert report["tree"]["n_steps"] == 100
    assert report["tree"]["hedger"]["price"] == pytest.approx(
        report["pde"]["hedger"]["price"], abs=0.25
    )


def test_price_collateralized():
    """Test collateralised contracts are priced on the lattice."""
    document = _document(
        contract={"collateral": {"form": "constant", "value": 20.0}}
    )
    config = RunConfig.model_validate(document)

    report = cmd_price(config)

    assert "pde" not in report
    assert report["tree"]["hedger"]["price"] >= report["tree"]["counterparty"]["price"]


def test_price_long_lattice(tmp_path):
    """Test a fine lattice under differential rates prices without error."""
    path = _write(
        tmp_path, _document(solver={"methods": ["tree"], "tree_steps": 2000})
    )

    code, stdout, stderr = _run(["price", path])

    assert code == 0, stderr
    report = json.loads(stdout)
    assert report["tree"]["hedger"]["price"] == pytest.approx(
        black_scholes(100.0, 100.0, 1.0, 0.05, 0.2), rel=5e-3
    )


@pytest.mark.parametrize(
    "error",
    [
        ConvergenceError("did not converge", residual=1.0, iterations=5, time=0.5),
        StabilityError("step is unstable"),
    ],
)
def test_numerical_failure(error, tmp_path, monkeypatch):
    """Test solver failures end the run with an error message."""
    path = _write(tmp_path, _document())

    def fail(config, **kwargs):
        raise error

    monkeypatch.setattr("fairrange.cli.cmd_price", fail)

    code, _, stderr = _run(["price", path])

    assert code == 1
    assert stderr.startswith("error:")


def test_price_empty_range(tmp_path):
    """Test a wealthy hedger facing an indebted counterparty leaves no range."""
    path = _write(tmp_path, _document(endowments={"x1": 1000.0, "x2": -1000.0}))

    with pytest.warns(UserWarning, match="range is empty"):
        code, stdout, _ = _run(["price", path])

    assert code == 0
    assert json.loads(stdout)["fair_range"]["empty"]

    code, _, _ = _run(["price", path, "--require-nonempty-range"])

    assert code == EXIT_CHECK_FAILED


def test_crosscheck(tmp_path):
    """Test the finite-difference and lattice prices agree at equal rates."""
    document = _document(
        rates={"r_b": [[0.0, 0.02]]},
        solver={"n_space": 391, "n_time": 400, "tree_steps": 1000},
    )
    path = _write(tmp_path, document)

    code, stdout, _ = _run(["crosscheck", path])

    assert code == 0
    report = json.loads(stdout)
    assert report["passed"]
    assert [row["party"] for row in report["rows"]] == ["hedger", "counterparty"]
    for row in report["rows"]:
        assert abs(row["pde"] - row["black_scholes"]) <= row["tolerance"]


def test_crosscheck_collateralized(tmp_path):
    """Test the crosscheck refuses collateralised contracts."""
    document = _document(
        contract={"collateral": {"form": "constant", "value": 20.0}}
    )
    path = _write(tmp_path, document)

    code, _, stderr = _run(["crosscheck", path])

    assert code == 1
    assert "uncollateralised" in stderr


def test_hedge(tmp_path):
    """Test the hedge report and the per-path tables."""
    path = _write(tmp_path, _document())
    out = tmp_path / "reports"

    code, stdout, _ = _run(
        ["hedge", path, "--out", str(out), "--paths", "100", "--dump-paths", "2"]
    )

    assert code == 0
    report = json.loads(stdout)
    assert report["replication"]["n_paths"] == 100
    assert report["replication"]["n_steps"] == 20
    assert report["replication"]["exclusivity_violations"] == 0
    assert report["netted_wealth"]["n_paths"] == 100
    assert "arbitrage" in report["netted_wealth"]
    assert (out / "hedge.json").exists()

    table = pd.read_csv(out / "hedge_path_1.csv")
    assert len(table) == 21
    assert not (out / "hedge_path_2.csv").exists()


def test_hedge_negative_endowment(tmp_path):
    """Test the netted wealth check is skipped for a negative endowment."""
    path = _write(tmp_path, _document(endowments={"x1": -10.0}))

    code, stdout, _ = _run(["hedge", path, "--paths", "50"])

    assert code == 0
    assert json.loads(stdout)["netted_wealth"] is None


@pytest.mark.parametrize("axis", ["x1", "rate-spread"])
def test_sweep(axis, tmp_path):
    """Test a sweep writes one row per value."""
    path = _write(tmp_path, _document())
    out = tmp_path / "reports"

    code, stdout, _ = _run(
        ["sweep", path, "--axis", axis, "--values", "0", "0.03", "--out", str(out)]
    )

    assert code == 0
    table = pd.read_csv(out / "sweep.csv")
    pd.testing.assert_frame_equal(table, pd.read_csv(io.StringIO(stdout)))
    assert list(table[axis]) == [0.0, 0.03]
    assert {"hedger_price", "counterparty_price", "width", "empty"} <= set(
        table.columns
    )
    assert (table["width"] >= -1e-8).all()


def test_sweep_rate_spread_closes_range(tmp_path):
    """Test a zero spread collapses the range."""
    path = _write(tmp_path, _document())

    code, stdout, _ = _run(
        ["sweep", path, "--axis", "rate-spread", "--values", "0", "0.05"]
    )

    assert code == 0
    table = pd.read_csv(io.StringIO(stdout))
    assert table["width"].iloc[0] == pytest.approx(0.0, abs=1e-8)
    assert table["width"].iloc[1] > table["width"].iloc[0]


def test_sweep_spot_moves_grid(tmp_path):
    """Test the grid follows the spot along a spot sweep."""
    document = _document(
        rates={"r_l": [[0.0, 0.05]], "r_b": [[0.0, 0.05]]},
        solver={"n_space": 401, "n_time": 100},
    )
    path = _write(tmp_path, document)

    code, stdout, _ = _run(["sweep", path, "--axis", "spot", "--values", "100", "500"])

    assert code == 0
    table = pd.read_csv(io.StringIO(stdout))
    expected = black_scholes(np.array([100.0, 500.0]), 100.0, 1.0, 0.05, 0.2)
    assert table["hedger_price"].iloc[0] == pytest.approx(expected[0], abs=0.1)
    assert table["hedger_price"].iloc[1] == pytest.approx(expected[1], abs=0.5)
    assert table["counterparty_price"].iloc[1] == pytest.approx(expected[1], abs=0.5)


def test_invalid_config(tmp_path):
    """Test validation errors are reported with their location."""
    path = _write(tmp_path, _document(rates={"r_l": [[0.0, 0.06]]}))

    code, _, stderr = _run(["price", path])

    assert code == 1
    assert "exceeds the borrowing rate" in stderr


def test_unknown_field(tmp_path):
    """Test unknown fields are rejected."""
    path = _write(tmp_path, _document(solver={"cfl": 0.5}))

    code, _, stderr = _run(["price", path])

    assert code == 1
    assert "solver.cfl" in stderr


def test_missing_config(tmp_path):
    """Test a missing configuration file."""
    code, _, stderr = _run(["price", str(tmp_path / "missing.json")])

    assert code == 1
    assert stderr.startswith("error:")


def test_malformed_grid(tmp_path):
    """Test a malformed grid flag is rejected by the parser."""
    path = _write(tmp_path, _document())

    with pytest.raises(SystemExit), redirect_stderr(io.StringIO()):
        main(["price", path, "--grid", "400by400"])
