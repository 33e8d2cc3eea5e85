"""Forward-phase fulfillment and the three chance-constraint families.

Two backends estimate the same probabilities:

* :func:`estimate_risks_mc` replays a fixed sample path (common random
  numbers, drawn from the seed alone) and counts events.
* :func:`compute_risks_exact` enumerates attendance outcomes and integrates
  workloads on an equal-probability quantile grid.  It is the test oracle.

Both serve sellers with the same FCFS rule as :func:`simulate_fulfillment`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .market import (
    ContractSet,
    ForwardContract,
    Level,
    Realization,
    Scenario,
    ValidationError,
    derive_stream,
    expected_realized_quality,
    realized_quality,
    service_cost,
)

SELLER_ABSENT = "seller-absent"
BUYER_ABSENT = "buyer-absent"
CAPACITY_EXCEEDED = "capacity-exceeded"

EXACT_MAX_SELLERS = 15
EXACT_MAX_RANDOM_BUYERS = 10


class CapacityError(RuntimeError):
    """An instance exceeds a resource guard (enumeration size, node budget)."""


@dataclass(frozen=True)
class ServedItem:
    buyer_id: str
    level: Level
    quality: float
    price: float
    cost: float


@dataclass
class FulfillmentOutcome:
    served: dict[str, list[ServedItem]]
    unserved_contracts: list[tuple[str, str, str]]
    buyer_quality: dict[str, float]
    buyer_payment: dict[str, float]
    penalties: dict[str, float] = field(default_factory=dict)

    def busy_sellers(self) -> set[str]:
        return {sid for sid, items in self.served.items() if items}


@dataclass
class RiskReport:
    shortfall: dict[str, float]
    over_budget: dict[str, float]
    seller_loss: dict[str, float]
    backend: dict
    expected_quality: dict[str, float] = field(default_factory=dict)

    def objective(self) -> float:
        return math.fsum(self.expected_quality[k] for k in sorted(self.expected_quality))

    def violations(self, bounds, tol: float = 0.0) -> list[str]:
        out = []
        for k, p in sorted(self.shortfall.items()):
            if p > bounds.eps_shortfall + tol:
                out.append(f"shortfall[{k}]={p:.4f}")
        for k, p in sorted(self.over_budget.items()):
            if p > bounds.eps_budget + tol:
                out.append(f"over_budget[{k}]={p:.4f}")
        for k, p in sorted(self.seller_loss.items()):
            if p > bounds.eps_seller_loss + tol:
                out.append(f"seller_loss[{k}]={p:.4f}")
        return out

    def within(self, bounds, tol: float = 0.0) -> bool:
        return not self.violations(bounds, tol)

    def to_dict(self) -> dict:
        return {
            "backend": dict(self.backend),
            "shortfall": dict(sorted(self.shortfall.items())),
            "over_budget": dict(sorted(self.over_budget.items())),
            "seller_loss": dict(sorted(self.seller_loss.items())),
            "expected_quality": dict(sorted(self.expected_quality.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RiskReport":
        return cls(
            shortfall=dict(d["shortfall"]),
            over_budget=dict(d["over_budget"]),
            seller_loss=dict(d["seller_loss"]),
            backend=dict(d["backend"]),
            expected_quality=dict(d.get("expected_quality", {})),
        )


def _seller_contracts(scenario: Scenario, contracts: Sequence[ForwardContract]) -> dict[str, list[ForwardContract]]:
    """Contracts per seller in FCFS order (buyer arrival rank)."""
    grouped: dict[str, list[ForwardContract]] = {}
    for c in contracts:
        scenario.seller(c.seller_id)
        scenario.buyer(c.buyer_id)
        grouped.setdefault(c.seller_id, []).append(c)
    for sid in grouped:
        grouped[sid].sort(key=lambda c: scenario.buyer(c.buyer_id).arrival_rank)
    return grouped


def fcfs_serve(ordered: Sequence[ForwardContract], seller_present: bool, buyer_present: Mapping[str, bool], capacity: int):
    """Split one seller's rank-ordered contracts into served and unserved.

    Returns ``(served_contracts, [(contract, reason), ...])``.
    """
    served, unserved = [], []
    for c in ordered:
        if not seller_present:
            unserved.append((c, SELLER_ABSENT))
        elif not buyer_present[c.buyer_id]:
            unserved.append((c, BUYER_ABSENT))
        elif len(served) < capacity:
            served.append(c)
        else:
            unserved.append((c, CAPACITY_EXCEEDED))
    return served, unserved


def simulate_fulfillment(scenario: Scenario, contracts: Sequence[ForwardContract], realization: Realization) -> FulfillmentOutcome:
    econ = scenario.econ
    grouped = _seller_contracts(scenario, contracts)
    served: dict[str, list[ServedItem]] = {}
    unserved: list[tuple[str, str, str]] = []
    penalties: dict[str, float] = {}
    bq = {b.id: [] for b in scenario.buyers}
    bp = {b.id: [] for b in scenario.buyers}
    for sid in sorted(grouped):
        seller = scenario.seller(sid)
        ok, rest = fcfs_serve(grouped[sid], realization.seller_attendance[sid], realization.buyer_attendance, seller.capacity)
        load = realization.workloads[sid]
        items = []
        for c in ok:
            q = realized_quality(c.level, seller.q_plus[c.buyer_id], econ.xi, load)
            cost = service_cost(c.level, seller.base_cost[c.buyer_id], econ.kappa, load)
            items.append(ServedItem(c.buyer_id, c.level, q, c.price, cost))
            bq[c.buyer_id].append(q)
            bp[c.buyer_id].append(c.price)
        served[sid] = items
        for c, reason in rest:
            unserved.append((sid, c.buyer_id, reason))
        # a present seller that turns a present contracted buyer away forfeits the penalty
        penalties[sid] = math.fsum(c.penalty for c, reason in rest if reason == CAPACITY_EXCEEDED)
    return FulfillmentOutcome(
        served=served,
        unserved_contracts=unserved,
        buyer_quality={k: math.fsum(v) for k, v in bq.items()},
        buyer_payment={k: math.fsum(v) for k, v in bp.items()},
        penalties=penalties,
    )


# --------------------------------------------------------------------------
# Monte Carlo backend
# --------------------------------------------------------------------------


class SamplePath:
    """Common-random-number draws for ``samples`` transactions.

    Depends on (scenario participants, samples, seed) only, never on a
    contract set, so every candidate is scored on identical randomness.
    """

    def __init__(self, scenario: Scenario, samples: int, seed: int):
        if samples < 1:
            raise ValueError(f"samples must be >= 1, got {samples}")
        self.scenario = scenario
        self.samples = samples
        self.seed = seed
        m, n = len(scenario.sellers), len(scenario.buyers)
        self.seller_present = np.empty((samples, m), dtype=bool)
        self.buyer_present = np.empty((samples, n), dtype=bool)
        self.workloads = np.empty((samples, m))
        # one stream per participant id, so listing order does not change the draws
        for j, s in enumerate(scenario.sellers):
            rng = derive_stream(seed, f"risk-path/seller/{s.id}")
            self.seller_present[:, j] = rng.random(samples) < s.attendance_prob
            self.workloads[:, j] = s.workload.ppf(rng.random(samples))
        for j, b in enumerate(scenario.buyers):
            self.buyer_present[:, j] = derive_stream(seed, f"risk-path/buyer/{b.id}").random(samples) < b.attendance_prob
        self.seller_col = {s.id: j for j, s in enumerate(scenario.sellers)}
        self.buyer_col = {b.id: j for j, b in enumerate(scenario.buyers)}
        self._contrib_cache: dict = {}

    def seller_contribution(self, seller_id: str, choice: Sequence[tuple[str, Level, float, float]]):
        """Vectorised :func:`fcfs_serve` for one seller.

        ``choice`` holds ``(buyer_id, level, price, penalty)`` entries.  The
        result is cached; sellers interact only through buyers' sums, so a
        contract set's statistics are a fold over per-seller contributions.
        """
        key = (seller_id, tuple(choice))
        hit = self._contrib_cache.get(key)
        if hit is not None:
            return hit
        sc = self.scenario
        seller = sc.seller(seller_id)
        econ = sc.econ
        j = self.seller_col[seller_id]
        present = self.seller_present[:, j]
        load = self.workloads[:, j]
        ordered = sorted(choice, key=lambda e: sc.buyer(e[0]).arrival_rank)
        count = np.zeros(self.samples, dtype=np.int64)
        income = np.zeros(self.samples)
        cost = np.zeros(self.samples)
        penalty = np.zeros(self.samples)
        per_buyer = []
        for bid, level, price, pen in ordered:
            eligible = present & self.buyer_present[:, self.buyer_col[bid]]
            serve = eligible & (count < seller.capacity)
            count += serve
            qp = seller.q_plus[bid]
            if level is Level.PLUS:
                q = np.where(serve, qp, 0.0)
                cost += np.where(serve, seller.base_cost[bid] + econ.kappa * load, 0.0)
            else:
                q = np.where(serve, np.maximum(0.0, qp - econ.xi * load), 0.0)
                cost += np.where(serve, seller.base_cost[bid], 0.0)
            pay = np.where(serve, price, 0.0)
            income += pay
            if pen:
                penalty += np.where(eligible & ~serve, pen, 0.0)
            per_buyer.append((self.buyer_col[bid], q, pay))
        loss = (income - cost - penalty < 0) & (count > 0)
        out = (tuple(per_buyer), loss)
        if len(self._contrib_cache) > 50_000:
            self._contrib_cache.clear()
        self._contrib_cache[key] = out
        return out

    def evaluate(self, choices: Mapping[str, Sequence[tuple[str, Level, float, float]]]) -> RiskReport:
        """Risk report for per-seller choices, folded in sorted seller order."""
        sc = self.scenario
        n = len(sc.buyers)
        quality = np.zeros((self.samples, n))
        payment = np.zeros((self.samples, n))
        seller_loss = {}
        for sid in sorted(choices):
            if not choices[sid]:
                continue
            per_buyer, loss = self.seller_contribution(sid, choices[sid])
            for col, q, pay in per_buyer:
                quality[:, col] += q
                payment[:, col] += pay
            seller_loss[sid] = float(loss.mean())
        req = np.array([b.required_quality for b in sc.buyers])
        budget = np.array([b.budget for b in sc.buyers])
        short = (self.buyer_present & (quality < req)).mean(axis=0)
        over = (payment > budget).mean(axis=0)
        eq = quality.mean(axis=0)
        ids = [b.id for b in sc.buyers]
        return RiskReport(
            shortfall={b: float(v) for b, v in zip(ids, short)},
            over_budget={b: float(v) for b, v in zip(ids, over)},
            seller_loss=seller_loss,
            backend={"kind": "MonteCarlo", "samples": self.samples, "seed": self.seed},
            expected_quality={b: float(v) for b, v in zip(ids, eq)},
        )


def contracts_to_choices(contracts: Sequence[ForwardContract]) -> dict[str, tuple]:
    out: dict[str, list] = {}
    for c in contracts:
        out.setdefault(c.seller_id, []).append((c.buyer_id, c.level, c.price, c.penalty))
    return {k: tuple(sorted(v, key=lambda e: (e[0], e[1].order))) for k, v in out.items()}


def estimate_risks_mc(scenario: Scenario, contracts: Sequence[ForwardContract], samples: int, seed: int,
                      path: SamplePath | None = None) -> RiskReport:
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    ContractSet(contracts).validate(scenario)
    if path is None or path.samples != samples or path.seed != seed or path.scenario is not scenario:
        path = SamplePath(scenario, samples, seed)
    return path.evaluate(contracts_to_choices(contracts))


# --------------------------------------------------------------------------
# Exact backend
# --------------------------------------------------------------------------


def _requantize(values: np.ndarray, weights: np.ndarray, cap: int):
    """Collapse a discrete law to at most ``cap`` equal-probability atoms."""
    if values.size <= cap:
        return values, weights
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cw = np.cumsum(w)
    total = cw[-1]
    bins = np.minimum((cw - w / 2) / total * cap, cap - 1).astype(np.int64)
    mass = np.bincount(bins, weights=w, minlength=cap)
    mom = np.bincount(bins, weights=w * v, minlength=cap)
    keep = mass > 0
    return mom[keep] / mass[keep], mass[keep]


def _shortfall_given_served(constant: float, minus_terms: Sequence[tuple[float, object]], xi: float,
                            requirement: float, grid_points: int, atom_cap: int = 4096) -> float:
    if not minus_terms:
        return 1.0 if constant < requirement else 0.0
    vals = np.array([constant])
    wts = np.array([1.0])
    for q_plus, spec in minus_terms:
        nodes = np.maximum(0.0, q_plus - xi * spec.quantile_nodes(grid_points))
        vals = (vals[:, None] + nodes[None, :]).ravel()
        wts = (wts[:, None] * np.full(grid_points, 1.0 / grid_points)[None, :]).ravel()
        vals, wts = _requantize(vals, wts, atom_cap)
    return float(wts[vals < requirement].sum())


def compute_risks_exact(scenario: Scenario, contracts: Sequence[ForwardContract], grid_points: int = 64) -> RiskReport:
    """Enumerate attendance outcomes; integrate workloads on a quantile grid.

    Seller loss depends on a single workload through a linear threshold, so it
    uses the truncated-Gaussian survival function directly.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    ContractSet(contracts).validate(scenario)
    grouped = _seller_contracts(scenario, contracts)
    if len(grouped) > EXACT_MAX_SELLERS:
        raise CapacityError(f"exact backend limited to {EXACT_MAX_SELLERS} contracted sellers (got {len(grouped)})")
    econ = scenario.econ
    contracted_buyers = sorted({c.buyer_id for c in contracts})
    rand_sellers = [sid for sid in sorted(grouped) if 0.0 < scenario.seller(sid).attendance_prob < 1.0]
    rand_buyers = [bid for bid in sorted(scenario.buyer_index) if 0.0 < scenario.buyer(bid).attendance_prob < 1.0]
    if len(rand_buyers) > EXACT_MAX_RANDOM_BUYERS:
        raise CapacityError(f"exact backend limited to {EXACT_MAX_RANDOM_BUYERS} random-attendance buyers")

    shortfall = {b.id: 0.0 for b in scenario.buyers}
    over = {b.id: 0.0 for b in scenario.buyers}
    eq = {b.id: 0.0 for b in scenario.buyers}
    loss = {sid: 0.0 for sid in grouped}
    short_memo: dict = {}
    loss_memo: dict = {}
    eq_memo: dict = {}

    def eq_of(sid, bid, level):
        key = (sid, bid, level)
        if key not in eq_memo:
            s = scenario.seller(sid)
            eq_memo[key] = expected_realized_quality(level, s.q_plus[bid], econ.xi, s.workload)
        return eq_memo[key]

    for s_bits in itertools.product((False, True), repeat=len(rand_sellers)):
        s_att = {sid: scenario.seller(sid).attendance_prob >= 1.0 for sid in grouped}
        w_s = 1.0
        for sid, bit in zip(rand_sellers, s_bits):
            p = scenario.seller(sid).attendance_prob
            s_att[sid] = bit
            w_s *= p if bit else 1.0 - p
        for b_bits in itertools.product((False, True), repeat=len(rand_buyers)):
            b_att = {b.id: b.attendance_prob >= 1.0 for b in scenario.buyers}
            w = w_s
            for bid, bit in zip(rand_buyers, b_bits):
                p = scenario.buyer(bid).attendance_prob
                b_att[bid] = bit
                w *= p if bit else 1.0 - p
            if w == 0.0:
                continue
            got: dict[str, list[tuple[str, Level]]] = {b: [] for b in scenario.buyer_index}
            pay: dict[str, float] = {b: 0.0 for b in scenario.buyer_index}
            for sid, ordered in grouped.items():
                seller = scenario.seller(sid)
                ok, rest = fcfs_serve(ordered, s_att[sid], b_att, seller.capacity)
                for c in ok:
                    got[c.buyer_id].append((sid, c.level))
                    pay[c.buyer_id] += c.price
                if ok:
                    pen = math.fsum(c.penalty for c, r in rest if r == CAPACITY_EXCEEDED)
                    key = (sid, tuple((c.buyer_id, c.level) for c in ok), pen)
                    if key not in loss_memo:
                        loss_memo[key] = _loss_prob(scenario, sid, ok, pen)
                    loss[sid] += w * loss_memo[key]
            for bid in scenario.buyer_index:
                if pay[bid] > scenario.buyer(bid).budget:
                    over[bid] += w
                eq[bid] += w * math.fsum(eq_of(sid, bid, lvl) for sid, lvl in got[bid])
                if not b_att[bid]:
                    continue
                key = (bid, tuple(sorted(got[bid])))
                if key not in short_memo:
                    const = math.fsum(scenario.seller(sid).q_plus[bid] for sid, lvl in got[bid] if lvl is Level.PLUS)
                    minus = [(scenario.seller(sid).q_plus[bid], scenario.seller(sid).workload)
                             for sid, lvl in sorted(got[bid]) if lvl is Level.MINUS]
                    short_memo[key] = _shortfall_given_served(
                        const, minus, econ.xi, scenario.buyer(bid).required_quality, grid_points)
                shortfall[bid] += w * short_memo[key]

    clip = lambda d: {k: min(1.0, max(0.0, v)) for k, v in d.items()}
    return RiskReport(
        shortfall=clip(shortfall),
        over_budget=clip(over),
        seller_loss=clip(loss),
        backend={"kind": "Exact", "grid_points": grid_points},
        expected_quality=eq,
    )


def _loss_prob(scenario: Scenario, sid: str, served: Sequence[ForwardContract], penalty: float) -> float:
    seller = scenario.seller(sid)
    kappa = scenario.econ.kappa
    income = math.fsum(c.price for c in served)
    fixed = math.fsum(seller.base_cost[c.buyer_id] for c in served) + penalty
    n_plus = sum(1 for c in served if c.level is Level.PLUS)
    slack = income - fixed
    if n_plus == 0 or kappa == 0:
        return 1.0 if slack < 0 else 0.0
    # loss iff slack - kappa * n_plus * l < 0
    return float(seller.workload.sf(slack / (kappa * n_plus)))


def expected_buyer_quality(scenario: Scenario, contracts: Sequence[ForwardContract], backend: str = "mc",
                           samples: int = 10_000, seed: int = 0, grid_points: int = 64) -> dict[str, float]:
    if backend == "mc":
        return estimate_risks_mc(scenario, contracts, samples, seed).expected_quality
    if backend == "exact":
        return compute_risks_exact(scenario, contracts, grid_points).expected_quality
    raise ValueError(f"unknown backend {backend!r}")
