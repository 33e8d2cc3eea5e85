"""Implicit enumeration over per-seller contract choices (ImproveIE).

Depth-first search, one seller per level.  Three facts make it fast and
keep it exact on the shared sample path:

* a seller's contribution to buyers' quality and payments depends only on
  its own choice, so decided sellers are fixed sums;
* payments and booked quality only grow as more sellers are decided, so an
  over-budget, seller-loss or overbooking violation at a partial node is
  final and the subtree is cut;
* the optimistic bound adds, for every undecided seller, the best expected
  quality any of its choices can deliver.
"""
from __future__ import annotations

import time

import numpy as np

from ..risk import CapacityError
from .problem import ForwardProblem, SolveResult

TIE_TOL = 1e-9


class NodeBudgetExceeded(CapacityError):
    def __init__(self, message: str, incumbent: SolveResult):
        super().__init__(message)
        self.incumbent = incumbent


def solve_exact_ie(problem: ForwardProblem, max_sellers: int = 10, max_nodes: int = 2_000_000,
                   use_bound: bool = True) -> SolveResult:
    t0 = time.perf_counter()
    sc = problem.scenario
    path = problem.path
    bounds = problem.bounds
    n_buyers = len(sc.buyers)
    sellers = [s.id for s in sc.sellers]
    if len(sellers) > max_sellers:
        raise CapacityError(f"exact solver guard: {len(sellers)} sellers > max_sellers={max_sellers}")

    req = np.array([b.required_quality for b in sc.buyers])
    budget = np.array([b.budget for b in sc.buyers])
    cap_booked = (1.0 + problem.limits.max_buyer_overbooking) * req
    bcol = path.buyer_col
    S = path.samples

    # per seller: admissible options as (value, pairs, choice, per_buyer arrays, booked vector)
    options: dict[str, list] = {}
    best_value: dict[str, float] = {}
    potential: dict[str, np.ndarray] = {}
    for sid in sellers:
        opts = []
        pot = np.zeros((S, n_buyers))
        for pairs in problem.alphabet(sid):
            choice = problem.choice_tuple(sid, pairs)
            if choice:
                per_buyer, loss = path.seller_contribution(sid, choice)
                if loss.mean() > bounds.eps_seller_loss:
                    continue
            else:
                per_buyer = ()
            booked = np.zeros(n_buyers)
            for bid, lvl in pairs:
                booked[bcol[bid]] += problem.booked((sid, bid, lvl))
            if np.any(booked > cap_booked + 1e-12):
                continue
            value = float(sum(q.mean() for _, q, _ in per_buyer))
            for col, q, _ in per_buyer:
                np.maximum(pot[:, col], q, out=pot[:, col])
            opts.append((value, pairs, choice, per_buyer, booked))
        key_of = lambda o: tuple((b, l.order) for b, l in o[1])
        opts.sort(key=lambda o: (-o[0], len(o[1]), key_of(o)))
        options[sid] = opts
        best_value[sid] = opts[0][0] if opts else 0.0
        potential[sid] = pot

    order = sorted(sellers, key=lambda s: (-best_value[s], s))
    depth_n = len(order)
    suffix_bound = np.zeros(depth_n + 1)
    suffix_pot = np.zeros((depth_n + 1, S, n_buyers))
    for d in range(depth_n - 1, -1, -1):
        suffix_bound[d] = suffix_bound[d + 1] + best_value[order[d]]
        suffix_pot[d] = suffix_pot[d + 1] + potential[order[d]]

    state = {"nodes": 0, "best": None, "best_obj": -np.inf, "best_key": None}
    trace: list[dict] = []
    chosen: dict[str, tuple] = {}

    def leaf():
        contracts = problem.contracts_from({sid: pairs for sid, pairs in chosen.items() if pairs})
        report = problem.evaluate(contracts)
        if not problem.is_feasible(contracts, report):
            return
        obj = report.objective()
        key = contracts.order_key()
        better = obj > state["best_obj"] + TIE_TOL
        tie = abs(obj - state["best_obj"]) <= TIE_TOL and (state["best_key"] is None or key < state["best_key"])
        if better or tie:
            state.update(best=(contracts, report), best_obj=obj, best_key=key)
            trace.append({"node": state["nodes"], "objective": obj, "violation": 0.0, "step_norm": 0.0})

    def partial_ok(depth, quality, payment, booked) -> bool:
        if np.any(booked > cap_booked + 1e-12):
            return False
        if np.any((payment > budget).mean(axis=0) > bounds.eps_budget):
            return False
        if bounds.eps_shortfall < 1.0 and n_buyers:
            optimistic = quality + suffix_pot[depth]
            short = (path.buyer_present & (optimistic < req)).mean(axis=0)
            if np.any(short > bounds.eps_shortfall):
                return False
        return True

    def dfs(depth, value, quality, payment, booked):
        state["nodes"] += 1
        if state["nodes"] > max_nodes:
            raise _Budget()
        if not partial_ok(depth, quality, payment, booked):
            return
        if depth == depth_n:
            leaf()
            return
        if use_bound and value + suffix_bound[depth] < state["best_obj"] - TIE_TOL:
            return
        sid = order[depth]
        for opt_value, pairs, choice, per_buyer, opt_booked in options[sid]:
            if use_bound and value + opt_value + suffix_bound[depth + 1] < state["best_obj"] - TIE_TOL:
                # options are sorted by value, nothing later can do better
                break
            if per_buyer:
                q_next, p_next = quality.copy(), payment.copy()
                for col, q, pay in per_buyer:
                    q_next[:, col] += q
                    p_next[:, col] += pay
            else:
                q_next, p_next = quality, payment
            chosen[sid] = pairs
            dfs(depth + 1, value + opt_value, q_next, p_next, booked + opt_booked)
            del chosen[sid]

    def result(converged: bool) -> SolveResult:
        if state["best"] is None:
            from ..market import ContractSet

            empty = ContractSet()
            report = problem.evaluate(empty)
            return SolveResult(empty, report.objective(), False, report, trace, time.perf_counter() - t0,
                               solver="exact", converged=converged, nodes=state["nodes"])
        contracts, report = state["best"]
        return SolveResult(contracts, report.objective(), True, report, trace, time.perf_counter() - t0,
                           solver="exact", converged=converged, nodes=state["nodes"])

    try:
        dfs(0, 0.0, np.zeros((S, n_buyers)), np.zeros((S, n_buyers)), np.zeros(n_buyers))
    except _Budget:
        raise NodeBudgetExceeded(f"exact solver node budget {max_nodes} exhausted", result(False)) from None
    return result(True)


class _Budget(Exception):
    pass
