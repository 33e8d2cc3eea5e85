"""Campaign configuration: strict YAML schema with defaults and a resolved echo.

Example::

    seed: 7
    scenario:
      synthetic: {sellers: 20, buyers: 10}
    transactions: 300
    methods: [IFAST, SPOT_DATAD, IMPROVE_IE, QUALITY_PREFER, MC_RANDOM]
    risk_bounds: {eps_shortfall: 0.35, eps_budget: 0.35, eps_seller_loss: 0.35}
    solver: {name: sca, mc_samples: 2000}
    output_dir: results

Unknown keys anywhere are rejected.  ``load_validate_config`` reports every
offense at once.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticError, field_validator, model_validator

from ..market import ValidationError

ALL_METHODS = ["IFAST", "SPOT_DATAD", "IMPROVE_IE", "QUALITY_PREFER", "MC_RANDOM"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticSource(_Strict):
    sellers: int = Field(ge=1)
    buyers: int = Field(ge=1)
    seed: Optional[int] = None
    ranges: dict = Field(default_factory=dict)


class ScenarioSource(_Strict):
    file: Optional[str] = None
    synthetic: Optional[SyntheticSource] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.file is None) == (self.synthetic is None):
            raise ValueError("exactly one of 'file' or 'synthetic' must be given")
        return self


class RiskBoundsConfig(_Strict):
    eps_shortfall: float = Field(0.35, ge=0.0, le=1.0)
    eps_budget: float = Field(0.35, ge=0.0, le=1.0)
    eps_seller_loss: float = Field(0.35, ge=0.0, le=1.0)


class SCAConfig(_Strict):
    max_outer: int = Field(50, ge=1)
    step_tol: float = Field(1e-3, gt=0)
    inner_tol: float = Field(1e-6, gt=0)
    max_inner: int = Field(300, ge=1)
    penalty_start: float = Field(10.0, gt=0)
    penalty_growth: float = Field(1.6, ge=1.0)
    penalty_max: float = Field(1e4, gt=0)
    integrality_start: float = Field(0.05, ge=0)
    integrality_growth: float = Field(1.3, ge=1.0)
    prox: float = Field(1.0, gt=0)


class ExactConfig(_Strict):
    max_sellers: int = Field(10, ge=1)
    max_nodes: int = Field(2_000_000, ge=1)


class SolverConfig(_Strict):
    name: Literal["sca", "exact"] = "sca"
    mc_samples: int = Field(2000, ge=1)
    seed: Optional[int] = None
    sca: SCAConfig = Field(default_factory=SCAConfig)
    exact: ExactConfig = Field(default_factory=ExactConfig)


class CampaignConfig(_Strict):
    scenario: ScenarioSource
    seed: int = Field(ge=0, lt=2**64)
    transactions: int = Field(300, ge=1)
    methods: list[str] = Field(default_factory=lambda: list(ALL_METHODS), min_length=1)
    risk_bounds: RiskBoundsConfig = Field(default_factory=RiskBoundsConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output_dir: str = "results"

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, v):
        out = []
        for m in v:
            tag = str(m).upper()
            if tag not in ALL_METHODS:
                raise ValueError(f"unknown method {m!r}; expected one of {ALL_METHODS}")
            if tag in out:
                raise ValueError(f"duplicate method {m!r}")
            out.append(tag)
        return out

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def resolved_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def _offenses(exc: PydanticError) -> list[str]:
    out = []
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        if err["type"] == "extra_forbidden":
            out.append(f"{where}: unknown key")
        else:
            out.append(f"{where}: {err['msg']}")
    return out


def config_from_dict(data, base_dir: Path | None = None) -> CampaignConfig:
    if not isinstance(data, dict):
        raise ValidationError(["<root>: config must be a mapping"])
    try:
        cfg = CampaignConfig.model_validate(data)
    except PydanticError as exc:
        raise ValidationError(_offenses(exc)) from None
    if base_dir is not None and cfg.scenario.file and not Path(cfg.scenario.file).is_absolute():
        src = cfg.scenario.model_copy(update={"file": str((base_dir / cfg.scenario.file).resolve())})
        cfg = cfg.model_copy(update={"scenario": src})
    return cfg


def load_validate_config(path) -> CampaignConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ValidationError([f"{path}: cannot read config ({exc.strerror})"]) from None
    except yaml.YAMLError as exc:
        raise ValidationError([f"{path}: not valid YAML ({exc})"]) from None
    return config_from_dict(data, base_dir=path.parent)
