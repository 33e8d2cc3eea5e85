"""Seeded synthetic markets drawn uniformly inside the case-study ranges."""
from __future__ import annotations

from dataclasses import dataclass, fields

from ..market import (
    BuyerProfile,
    EconomicParams,
    RiskBounds,
    Scenario,
    SellerProfile,
    StructuralLimits,
    TruncatedGaussianSpec,
    ValidationError,
    derive_stream,
)

Range = tuple[float, float]


@dataclass(frozen=True)
class SyntheticRanges:
    q_plus: Range = (4.0, 5.0)
    xi: Range = (0.3, 0.5)
    base_cost: Range = (1.0, 1.5)
    budget: Range = (8.0, 10.0)
    required_quality: Range = (7.5, 8.5)
    eps: Range = (0.30, 0.40)
    attendance: Range = (0.5, 0.95)
    buyer_attendance: Range = (1.0, 1.0)
    workload_mean: float = 2.5
    workload_std: float = 0.5
    workload_lo: float = 1.5
    workload_hi: float = 3.5

    def check(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                if len(v) != 2 or v[0] > v[1]:
                    out.append(f"range {f.name} must be [lo, hi] with lo <= hi, got {list(v)}")
        for name in ("attendance", "buyer_attendance", "eps"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi > 1:
                out.append(f"range {name} must lie in [0, 1]")
        return out

    @classmethod
    def from_dict(cls, d) -> "SyntheticRanges":
        d = dict(d or {})
        allowed = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - allowed)
        if unknown:
            raise ValidationError([f"ranges: unknown key {k!r}" for k in unknown])
        return cls(**{k: tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance((v := getattr(self, f.name)), tuple) else v for f in fields(self)}


def generate_synthetic(sellers: int, buyers: int, seed: int, ranges: SyntheticRanges | None = None,
                       econ: EconomicParams | None = None, limits: StructuralLimits | None = None) -> Scenario:
    ranges = ranges or SyntheticRanges()
    problems = ranges.check()
    if sellers < 1 or buyers < 1:
        problems.append("counts must be >= 1")
    if problems:
        raise ValidationError(problems)
    rng = derive_stream(seed, "synthetic")

    def u(r: Range, size=None):
        return rng.uniform(r[0], r[1], size) if r[0] < r[1] else (r[0] if size is None else [r[0]] * size)

    buyer_ids = [f"b{j + 1:02d}" for j in range(buyers)]
    seller_ids = [f"s{i + 1:02d}" for i in range(sellers)]
    ranks = rng.permutation(buyers) + 1
    base = econ or EconomicParams()
    econ = EconomicParams(xi=float(u(ranges.xi)), kappa=base.kappa, forward_margin=base.forward_margin,
                          spot_margin=base.spot_margin, default_penalty=base.default_penalty)
    eps = [float(x) for x in u(ranges.eps, 3)]
    bl = []
    for j, bid in enumerate(buyer_ids):
        bl.append(BuyerProfile(
            id=bid,
            required_quality=float(u(ranges.required_quality)),
            budget=float(u(ranges.budget)),
            arrival_rank=int(ranks[j]),
            attendance_prob=float(u(ranges.buyer_attendance)),
        ))
    workload = TruncatedGaussianSpec(ranges.workload_mean, ranges.workload_std, ranges.workload_lo, ranges.workload_hi)
    sl = []
    for sid in seller_ids:
        a = float(u(ranges.attendance))
        q = [float(x) for x in u(ranges.q_plus, buyers)]
        c = [float(x) for x in u(ranges.base_cost, buyers)]
        sl.append(SellerProfile(id=sid, attendance_prob=a, workload=workload,
                                q_plus=dict(zip(buyer_ids, q)), base_cost=dict(zip(buyer_ids, c))))
    return Scenario(
        sellers=tuple(sl),
        buyers=tuple(bl),
        econ=econ,
        risk_bounds=RiskBounds(*eps),
        limits=limits or StructuralLimits(),
    ).validate()
