"""Pure spot-trading baselines.

Each baseline sees the realized transaction (who showed up, current
workloads) and matches buyers to present sellers on the spot at spot
prices, under hard budgets and one task per seller.
"""
from __future__ import annotations

import enum
import time

import numpy as np

from .forward import NodeBudgetExceeded, build_spot_problem, solve_exact_ie, solve_sca
from .forward.sca import SCAParams
from .market import Level, Realization, Scenario, realized_quality, service_cost
from .spot import SpotAssignment, TransactionOutcome, _totals, spot_price

SPOT_IE_MAX_SELLERS = 64
SPOT_IE_MAX_NODES = 200_000
# spot problems are deterministic and small; a looser inner solve loses nothing in practice
SPOT_SCA_PARAMS = SCAParams(max_outer=30, inner_tol=1e-4, max_inner=100)


class MethodTag(str, enum.Enum):
    IFAST = "IFAST"
    SPOT_DATAD = "SPOT_DATAD"
    IMPROVE_IE = "IMPROVE_IE"
    QUALITY_PREFER = "QUALITY_PREFER"
    MC_RANDOM = "MC_RANDOM"

    @classmethod
    def parse(cls, value) -> "MethodTag":
        if isinstance(value, MethodTag):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown method {value!r}; expected one of {[m.value for m in cls]}") from None


def _assignments_from(problem, contracts, realization: Realization) -> list[SpotAssignment]:
    sc = problem.scenario
    econ = sc.econ
    out = []
    for c in contracts:
        s = sc.seller(c.seller_id)
        load = realization.workloads[c.seller_id]
        q = realized_quality(c.level, s.q_plus[c.buyer_id], econ.xi, load)
        cost = service_cost(c.level, s.base_cost[c.buyer_id], econ.kappa, load)
        out.append(SpotAssignment(c.buyer_id, c.seller_id, q, c.price, cost))
    return out


def run_spot_datad(scenario: Scenario, realization: Realization, sca_params: SCAParams | None = None) -> TransactionOutcome:
    t0 = time.perf_counter()
    problem = build_spot_problem(scenario, realization)
    flagged = ""
    if problem.scenario.sellers and problem.scenario.buyers:
        res = solve_sca(problem, sca_params or SPOT_SCA_PARAMS)
        contracts = res.contracts
        if not res.converged:
            flagged = "sca-not-converged"
    else:
        contracts = ()
    spot = _assignments_from(problem, contracts, realization)
    dt = time.perf_counter() - t0
    return _totals(scenario, realization, MethodTag.SPOT_DATAD.value, None, [], spot, dt, flagged)


def run_improve_ie(scenario: Scenario, realization: Realization, max_nodes: int = SPOT_IE_MAX_NODES) -> TransactionOutcome:
    t0 = time.perf_counter()
    problem = build_spot_problem(scenario, realization)
    flagged = ""
    if problem.scenario.sellers and problem.scenario.buyers:
        try:
            res = solve_exact_ie(problem, max_sellers=SPOT_IE_MAX_SELLERS, max_nodes=max_nodes)
        except NodeBudgetExceeded as exc:
            res = exc.incumbent
            flagged = "node-budget-exhausted"
        contracts = res.contracts
    else:
        contracts = ()
    spot = _assignments_from(problem, contracts, realization)
    dt = time.perf_counter() - t0
    return _totals(scenario, realization, MethodTag.IMPROVE_IE.value, None, [], spot, dt, flagged)


def run_quality_prefer(scenario: Scenario, realization: Realization) -> TransactionOutcome:
    t0 = time.perf_counter()
    econ = scenario.econ
    free = [s.id for s in scenario.sellers if realization.seller_attendance[s.id]]
    spot: list[SpotAssignment] = []
    for b in scenario.buyers_by_rank():
        if not realization.buyer_attendance[b.id]:
            continue
        budget, quality = b.budget, 0.0
        for sid in sorted(free, key=lambda m: (-scenario.seller(m).q_plus[b.id], m)):
            if quality >= b.required_quality:
                break
            s = scenario.seller(sid)
            price = spot_price(s, b.id, scenario, econ.spot_margin)
            if price > budget:
                continue
            load = realization.workloads[sid]
            q = realized_quality(Level.PLUS, s.q_plus[b.id], econ.xi, load)
            spot.append(SpotAssignment(b.id, sid, q, price, service_cost(Level.PLUS, s.base_cost[b.id], econ.kappa, load)))
            free.remove(sid)
            budget -= price
            quality += q
    dt = time.perf_counter() - t0
    return _totals(scenario, realization, MethodTag.QUALITY_PREFER.value, None, [], spot, dt)


def run_mc_random(scenario: Scenario, realization: Realization, stream: np.random.Generator) -> TransactionOutcome:
    t0 = time.perf_counter()
    econ = scenario.econ
    free = [s.id for s in scenario.sellers if realization.seller_attendance[s.id]]
    order = [b for b in scenario.buyers if realization.buyer_attendance[b.id]]
    order = [order[i] for i in stream.permutation(len(order))]
    spot: list[SpotAssignment] = []
    for b in order:
        budget, quality = b.budget, 0.0
        while quality < b.required_quality:
            affordable = [sid for sid in free if spot_price(scenario.seller(sid), b.id, scenario, econ.spot_margin) <= budget]
            if not affordable:
                break
            sid = affordable[int(stream.integers(len(affordable)))]
            s = scenario.seller(sid)
            price = spot_price(s, b.id, scenario, econ.spot_margin)
            load = realization.workloads[sid]
            q = realized_quality(Level.PLUS, s.q_plus[b.id], econ.xi, load)
            spot.append(SpotAssignment(b.id, sid, q, price, service_cost(Level.PLUS, s.base_cost[b.id], econ.kappa, load)))
            free.remove(sid)
            budget -= price
            quality += q
    dt = time.perf_counter() - t0
    return _totals(scenario, realization, MethodTag.MC_RANDOM.value, None, [], spot, dt)
