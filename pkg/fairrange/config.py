"""Validated run configuration read from JSON."""

from functools import partial
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .market import AssetModel, ContractSpec, Form, RateModel

__all__ = [
    "AssetConfig",
    "CollateralConfig",
    "ContractConfig",
    "EndowmentConfig",
    "FormConfig",
    "OutputConfig",
    "RatesConfig",
    "RunConfig",
    "SimulationConfig",
    "SolverConfig",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FormConfig(_Strict):
    form: Literal["constant", "proportional", "lognormal"]
    value: float

    def build(self) -> Form:
        return Form(self.form, self.value)


Segments = list[tuple[float, float]]


class RatesConfig(_Strict):
    """Rates as ``(t_start, rate)`` segments; ``r_c`` defaults to ``r_l``."""

    r_l: Segments = Field(min_length=1)
    r_b: Segments = Field(min_length=1)
    r_c: Segments | None = None

    @field_validator("r_l", "r_b", "r_c")
    @classmethod
    def _starts_at_zero(cls, segments: Segments | None) -> Segments | None:
        if segments is not None and (not segments or segments[0][0] != 0):
            raise ValueError("the first segment must start at t = 0")
        return segments


class AssetConfig(_Strict):
    mu: FormConfig = FormConfig(form="constant", value=0.0)
    sigma: FormConfig = FormConfig(form="lognormal", value=0.2)
    kappa: FormConfig = FormConfig(form="constant", value=0.0)
    beta: FormConfig | None = None


class CollateralConfig(_Strict):
    """``constant`` posts ``value`` until maturity, ``proportional_payoff`` posts
    ``value * H(s)``."""

    form: Literal["none", "constant", "proportional_payoff"] = "none"
    value: float = 0.0


class ContractConfig(_Strict):
    payoff: Literal["call", "put", "custom_piecewise_linear"]
    strikes: list[float] = Field(default_factory=list)
    points: list[tuple[float, float]] = Field(default_factory=list)
    maturity: float = Field(gt=0)
    initial_flow: float = 0.0
    flows: list[tuple[float, float]] = Field(default_factory=list)
    collateral: CollateralConfig = CollateralConfig()

    @model_validator(mode="after")
    def _payoff_arguments(self):
        match self.payoff:
            case "call" | "put":
                if len(self.strikes) != 1:
                    raise ValueError(f"a {self.payoff} needs exactly one strike")
            case "custom_piecewise_linear":
                if len(self.points) < 2:
                    raise ValueError("a piecewise-linear payoff needs two points")
        return self


class EndowmentConfig(_Strict):
    x1: float = 0.0
    x2: float = 0.0


class SolverConfig(_Strict):
    n_space: int = Field(default=400, ge=3)
    n_time: int = Field(default=400, ge=1)
    s_min: float | None = Field(default=None, gt=0)
    s_max: float | None = Field(default=None, gt=0)
    tree_steps: int = Field(default=2000, ge=1)
    implicit: bool = True
    methods: list[Literal["pde", "tree"]] = Field(default_factory=lambda: ["pde"])


class SimulationConfig(_Strict):
    n_paths: int = Field(default=10_000, ge=1)
    n_steps: int = Field(default=250, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    batch_size: int = Field(default=10_000, ge=1)


class OutputConfig(_Strict):
    directory: str | None = None
    dump_paths: int = Field(default=0, ge=0)


def _constant_flow(amount: float, s):
    return amount + 0.0 * s


class RunConfig(_Strict):
    """Complete description of a run

    Parameters
    ----------
    spot : float
        Initial asset price
    rates : RatesConfig
        Lending, borrowing and collateral rates
    asset : AssetConfig
        Asset dynamics as named functional forms
    contract : ContractConfig
        Payoff, maturity, flows and collateral
    endowments : EndowmentConfig
        Endowments of the hedger (``x1``) and the counterparty (``x2``)
    solver : SolverConfig
        Grid, lattice and solver selection
    simulation : SimulationConfig
        Path counts and seed
    output : OutputConfig
        Output directory and path dump
    """

    spot: float = Field(default=100.0, gt=0)
    rates: RatesConfig
    asset: AssetConfig = AssetConfig()
    contract: ContractConfig
    endowments: EndowmentConfig = EndowmentConfig()
    solver: SolverConfig = SolverConfig()
    simulation: SimulationConfig = SimulationConfig()
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _domain_objects(self):
        # surfaces domain errors (rate ordering, knots, grid bounds) at parse time
        self.build_rates()
        self.build_asset()
        self.build_contract()
        if self.grid_bounds[0] >= self.grid_bounds[1]:
            raise ValueError("solver.s_min must be below solver.s_max")
        return self

    @property
    def grid_bounds(self) -> tuple[float, float]:
        solver = self.solver
        s_min = 0.1 * self.spot if solver.s_min is None else solver.s_min
        s_max = 4.0 * self.spot if solver.s_max is None else solver.s_max
        return s_min, s_max

    def build_rates(self) -> RateModel:
        rates = self.rates
        return RateModel.from_segments(
            r_l=rates.r_l,
            r_b=rates.r_b,
            r_c=rates.r_l if rates.r_c is None else rates.r_c,
            maturity=self.contract.maturity,
        )

    def build_asset(self) -> AssetModel:
        asset = self.asset
        return AssetModel(
            mu=asset.mu.build(),
            sigma=asset.sigma.build(),
            kappa=asset.kappa.build(),
            beta=None if asset.beta is None else asset.beta.build(),
        )

    def build_contract(self) -> ContractSpec:
        spec = self.contract
        maturity = spec.maturity
        flows = tuple(
            (time, partial(_constant_flow, amount)) for time, amount in spec.flows
        )
        kwargs = {"initial_flow": spec.initial_flow, "intermediate_flows": flows}
        match spec.payoff:
            case "call":
                contract = ContractSpec.call(spec.strikes[0], maturity, **kwargs)
            case "put":
                contract = ContractSpec.put(spec.strikes[0], maturity, **kwargs)
            case "custom_piecewise_linear":
                contract = ContractSpec.piecewise_linear(
                    spec.points, maturity, **kwargs
                )

        match spec.collateral.form:
            case "none":
                return contract
            case "constant":
                collateral = ContractSpec.constant_collateral(
                    spec.collateral.value, maturity
                )
            case "proportional_payoff":
                collateral = ContractSpec.payoff_collateral(
                    spec.collateral.value, contract.payoff, maturity
                )
        return ContractSpec(
            payoff=contract.payoff,
            maturity=maturity,
            initial_flow=contract.initial_flow,
            intermediate_flows=contract.intermediate_flows,
            collateral=collateral,
        )

    @classmethod
    def from_json(cls, source: str | Path) -> "RunConfig":
        """Parse a JSON document or the path of a file holding one."""
        if isinstance(source, Path) or not source.lstrip().startswith("{"):
            source = Path(source).read_text()
        return cls.model_validate_json(source)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def with_overrides(self, **sections) -> "RunConfig":
        """Copy with nested fields replaced, e.g. ``solver={"n_space": 200}``."""
        data = self.model_dump()
        for section, values in sections.items():
            if isinstance(values, dict):
                data[section].update(values)
            else:
                data[section] = values
        return type(self).model_validate(data)
