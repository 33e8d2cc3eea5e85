"""Single-objective contract-assignment problem and its solve record."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping

import numpy as np

from ..market import (
    BuyerProfile,
    ContractSet,
    ForwardContract,
    Level,
    RiskBounds,
    Realization,
    Scenario,
    SellerProfile,
    StructuralLimits,
    TruncatedGaussianSpec,
    contract_price,
    expected_cost,
    expected_realized_quality,
    second_moment_quality,
)
from ..risk import RiskReport, SamplePath

LEVELS = (Level.PLUS, Level.MINUS)
Entry = tuple  # (seller_id, buyer_id, Level)


@dataclass
class ForwardProblem:
    scenario: Scenario
    prices: dict
    penalty: float
    bounds: RiskBounds
    limits: StructuralLimits
    mc_samples: int = 2000
    seed: int = 0
    expected_profit: dict = field(default_factory=dict)

    @property
    def profit_constraint_ok(self) -> bool:
        return all(v >= -1e-12 for v in self.expected_profit.values())

    @cached_property
    def path(self) -> SamplePath:
        return SamplePath(self.scenario, self.mc_samples, self.seed)

    @cached_property
    def entries(self) -> list[Entry]:
        return sorted(self.prices, key=lambda e: (e[0], e[1], e[2].order))

    @cached_property
    def moments(self) -> dict:
        """Per-entry first and second moments of delivered quality (given service)."""
        sc = self.scenario
        out = {}
        for sid, bid, lvl in self.entries:
            s = sc.seller(sid)
            out[(sid, bid, lvl)] = (
                expected_realized_quality(lvl, s.q_plus[bid], sc.econ.xi, s.workload),
                second_moment_quality(lvl, s.q_plus[bid], sc.econ.xi, s.workload),
            )
        return out

    def weight(self, entry: Entry) -> float:
        """Capacity-free expected quality of one contract (objective coefficient)."""
        sid, bid, _ = entry
        return self.scenario.seller(sid).attendance_prob * self.scenario.buyer(bid).attendance_prob * self.moments[entry][0]

    def booked(self, entry: Entry) -> float:
        return self.scenario.seller(entry[0]).attendance_prob * self.moments[entry][0]

    def choice_tuple(self, sid: str, pairs) -> tuple:
        """Canonical per-seller choice for :meth:`SamplePath.seller_contribution`."""
        return tuple(sorted(((bid, lvl, self.prices[(sid, bid, lvl)], self.penalty) for bid, lvl in pairs),
                            key=lambda e: (e[0], e[1].order)))

    def alphabet(self, sid: str) -> list[tuple]:
        """All admissible per-seller choices: at most S_max buyers, one level each."""
        buyers = sorted({bid for s, bid, _ in self.prices if s == sid})
        cap = min(self.limits.max_contracts_per_seller, len(buyers))
        out = [()]
        for k in range(1, cap + 1):
            for group in itertools.combinations(buyers, k):
                for lvls in itertools.product(LEVELS, repeat=k):
                    out.append(tuple(zip(group, lvls)))
        return out

    def contracts_from(self, chosen: Mapping[str, tuple]) -> ContractSet:
        return ContractSet(
            ForwardContract(sid, bid, lvl, self.prices[(sid, bid, lvl)], self.penalty)
            for sid, pairs in chosen.items()
            for bid, lvl in pairs
        )

    def choices_from(self, contracts) -> dict[str, tuple]:
        grouped: dict[str, list] = {}
        for c in contracts:
            grouped.setdefault(c.seller_id, []).append((c.buyer_id, c.level))
        return {sid: self.choice_tuple(sid, pairs) for sid, pairs in grouped.items()}

    def overbooking_ok(self, contracts) -> bool:
        booked: dict[str, float] = {}
        for c in contracts:
            booked[c.buyer_id] = booked.get(c.buyer_id, 0.0) + self.booked((c.seller_id, c.buyer_id, c.level))
        o_max = self.limits.max_buyer_overbooking
        return all(v <= (1.0 + o_max) * self.scenario.buyer(b).required_quality + 1e-12 for b, v in booked.items())

    def structure_ok(self, contracts) -> bool:
        per_seller: dict[str, int] = {}
        for c in contracts:
            per_seller[c.seller_id] = per_seller.get(c.seller_id, 0) + 1
        pairs = [(c.seller_id, c.buyer_id) for c in contracts]
        return len(set(pairs)) == len(pairs) and all(v <= self.limits.max_contracts_per_seller for v in per_seller.values())

    def evaluate(self, contracts) -> RiskReport:
        return self.path.evaluate(self.choices_from(contracts))

    def is_feasible(self, contracts, report: RiskReport | None = None) -> bool:
        report = report or self.evaluate(contracts)
        return self.structure_ok(contracts) and self.overbooking_ok(contracts) and report.within(self.bounds)


@dataclass
class SolveResult:
    contracts: ContractSet
    objective: float
    feasible: bool
    risk_report: RiskReport
    solver_trace: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    solver: str = ""
    converged: bool = True
    nodes: int = 0
    certificate: RiskReport | None = None
    certified: bool | None = None

    def summary(self) -> dict:
        d = {
            "solver": self.solver,
            "feasible": self.feasible,
            "objective": self.objective,
            "converged": self.converged,
            "num_contracts": len(self.contracts),
            "nodes": self.nodes,
            "wall_time": self.wall_time,
            "risk_report": self.risk_report.to_dict(),
        }
        if self.certificate is not None:
            d["certificate"] = self.certificate.to_dict()
            d["certified"] = self.certified
        return d


def build_problem(scenario: Scenario, mc_samples: int = 2000, seed: int = 0, margin: float | None = None,
                  prices: Mapping | None = None) -> ForwardProblem:
    """Fix prices and turn the sellers' objective into a profit constraint.

    With ``price = (1 + margin) * expected_cost`` every contracted service has
    expected profit ``margin * expected_cost >= 0``; that is recorded in
    ``expected_profit`` so callers can verify it rather than assume it.
    """
    econ = scenario.econ
    margin = econ.forward_margin if margin is None else margin
    table = {}
    profit = {}
    for s in scenario.sellers:
        e_l = s.workload.expected()
        for b in scenario.buyers:
            for lvl in LEVELS:
                key = (s.id, b.id, lvl)
                if prices is not None:
                    p = prices[key]
                else:
                    p = contract_price(lvl, s.base_cost[b.id], econ.kappa, e_l, margin)
                table[key] = p
                profit[key] = p - expected_cost(lvl, s.base_cost[b.id], econ.kappa, e_l)
    return ForwardProblem(
        scenario=scenario,
        prices=table,
        penalty=econ.default_penalty,
        bounds=scenario.risk_bounds,
        limits=scenario.limits,
        mc_samples=mc_samples,
        seed=seed,
        expected_profit=profit,
    )


def build_spot_problem(scenario: Scenario, realization: Realization, seed: int = 0) -> ForwardProblem:
    """Deterministic single-transaction assignment problem for the spot baselines.

    Only present participants enter; attendance is certain and workloads are
    pinned to their realized values, so the chance constraints collapse to
    hard ones: no over-budget, no seller loss, quality maximised without a
    shortfall constraint.  Prices stay at the spot margin on expected cost,
    the same price a temporary seller charges in the hybrid mode.
    """
    econ = scenario.econ
    buyers = tuple(replace(b, attendance_prob=1.0) for b in scenario.buyers if realization.buyer_attendance[b.id])
    bids = [b.id for b in buyers]
    sellers = []
    prices = {}
    for s in scenario.sellers:
        if not realization.seller_attendance[s.id]:
            continue
        load = realization.workloads[s.id]
        pinned = TruncatedGaussianSpec(mean=load, std_dev=s.workload.std_dev, lo=load, hi=load + 1e-9)
        sellers.append(SellerProfile(
            id=s.id,
            attendance_prob=1.0,
            workload=pinned,
            q_plus={b: s.q_plus[b] for b in bids},
            base_cost={b: s.base_cost[b] for b in bids},
            capacity=s.capacity,
        ))
        e_l = s.workload.expected()
        for b in bids:
            for lvl in LEVELS:
                prices[(s.id, b, lvl)] = contract_price(lvl, s.base_cost[b], econ.kappa, e_l, econ.spot_margin)
    cap = max([s.capacity for s in sellers], default=1)
    realized = Scenario(
        sellers=tuple(sellers),
        buyers=buyers,
        econ=econ,
        risk_bounds=RiskBounds(eps_shortfall=1.0, eps_budget=0.0, eps_seller_loss=0.0),
        limits=StructuralLimits(max_contracts_per_seller=cap, max_buyer_overbooking=1e9),
    )
    return build_problem(realized, mc_samples=1, seed=seed, prices=prices)


def objective_of(report: RiskReport) -> float:
    return report.objective()


def empty_result(problem: ForwardProblem, solver: str) -> SolveResult:
    contracts = ContractSet()
    report = problem.evaluate(contracts)
    return SolveResult(contracts, report.objective(), problem.is_feasible(contracts, report), report, solver=solver)
