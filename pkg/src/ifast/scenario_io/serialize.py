"""Plain-data round trips for scenarios, contracts and reports (YAML on disk)."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

import yaml

from ..market import (
    BuyerProfile,
    ContractSet,
    EconomicParams,
    ForwardContract,
    Level,
    RiskBounds,
    Scenario,
    SellerProfile,
    StructuralLimits,
    TruncatedGaussianSpec,
    ValidationError,
)


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "econ": dict(vars(sc.econ)),
        "risk_bounds": dict(vars(sc.risk_bounds)),
        "limits": dict(vars(sc.limits)),
        "buyers": [
            {"id": b.id, "required_quality": b.required_quality, "budget": b.budget,
             "arrival_rank": b.arrival_rank, "attendance_prob": b.attendance_prob}
            for b in sc.buyers
        ],
        "sellers": [
            {
                "id": s.id,
                "attendance_prob": s.attendance_prob,
                "capacity": s.capacity,
                "workload": {"mean": s.workload.mean, "std_dev": s.workload.std_dev,
                             "lo": s.workload.lo, "hi": s.workload.hi},
                "q_plus": dict(s.q_plus),
                "base_cost": dict(s.base_cost),
            }
            for s in sc.sellers
        ],
    }


def _section(cls, data: Mapping | None, name: str):
    data = dict(data or {})
    allowed = set(cls.__dataclass_fields__)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ValidationError([f"{name}: unknown key {k!r}" for k in unknown])
    return cls(**data)


def scenario_from_dict(d: Mapping) -> Scenario:
    try:
        sellers = tuple(
            SellerProfile(
                id=str(s["id"]),
                attendance_prob=float(s["attendance_prob"]),
                workload=TruncatedGaussianSpec(**s.get("workload", {})),
                q_plus={str(k): float(v) for k, v in s["q_plus"].items()},
                base_cost={str(k): float(v) for k, v in s["base_cost"].items()},
                capacity=int(s.get("capacity", 1)),
            )
            for s in d["sellers"]
        )
        buyers = tuple(
            BuyerProfile(
                id=str(b["id"]),
                required_quality=float(b["required_quality"]),
                budget=float(b["budget"]),
                arrival_rank=int(b["arrival_rank"]),
                attendance_prob=float(b.get("attendance_prob", 1.0)),
            )
            for b in d["buyers"]
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed scenario document: {exc!r}") from None
    sc = Scenario(
        sellers=sellers,
        buyers=buyers,
        econ=_section(EconomicParams, d.get("econ"), "econ"),
        risk_bounds=_section(RiskBounds, d.get("risk_bounds"), "risk_bounds"),
        limits=_section(StructuralLimits, d.get("limits"), "limits"),
    )
    return sc.validate()


def contracts_to_dict(contracts) -> dict:
    return {
        "contracts": [
            {"seller_id": c.seller_id, "buyer_id": c.buyer_id, "level": c.level.value,
             "price": c.price, "penalty": c.penalty}
            for c in ContractSet(contracts)
        ]
    }


def contracts_from_dict(d: Mapping) -> ContractSet:
    try:
        return ContractSet(
            ForwardContract(str(c["seller_id"]), str(c["buyer_id"]), Level.parse(c["level"]),
                            float(c["price"]), float(c.get("penalty", 0.0)))
            for c in d.get("contracts") or []
        ).validate()
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed contract document: {exc!r}") from None


def dump_yaml(data: Any, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data))
    return path


def dumps(data: Any) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False)


def load_yaml(path: str | Path) -> Any:
    with open(path) as fh:
        return yaml.safe_load(fh)


def save_scenario(sc: Scenario, path) -> Path:
    return dump_yaml(scenario_to_dict(sc), path)


def load_scenario(path) -> Scenario:
    return scenario_from_dict(load_yaml(path))


def save_contracts(contracts, path) -> Path:
    return dump_yaml(contracts_to_dict(contracts), path)


def load_contracts(path) -> ContractSet:
    return contracts_from_dict(load_yaml(path))
