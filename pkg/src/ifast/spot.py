"""One transaction of the hybrid mode: forward fulfillment, then spot backup."""
from __future__ import annotations

import math
import time
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .market import (
    BuyerProfile,
    ForwardContract,
    Level,
    Realization,
    Scenario,
    contract_price,
    realized_quality,
    service_cost,
)
from .risk import FulfillmentOutcome, simulate_fulfillment


@dataclass(frozen=True)
class SpotConfig:
    spot_margin: float = 0.5
    spot_level: Level = Level.PLUS
    eligibility: str = "idle-attendant-sellers"

    def __post_init__(self):
        if self.spot_margin < 0:
            raise ValueError("spot_margin must be >= 0")
        if self.eligibility != "idle-attendant-sellers":
            raise ValueError(f"unknown eligibility rule {self.eligibility!r}")

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "SpotConfig":
        return cls(spot_margin=scenario.econ.spot_margin)


@dataclass(frozen=True)
class SpotAssignment:
    buyer_id: str
    seller_id: str
    quality: float
    price: float
    cost: float


@dataclass
class TransactionOutcome:
    method: str
    transaction_index: int
    realization_digest: str
    fulfillment: FulfillmentOutcome | None
    volunteers: list[str]
    spot_assignments: list[SpotAssignment]
    buyer_totals: dict[str, tuple[float, float, float]]  # quality, payment, utility
    seller_totals: dict[str, tuple[float, float, float]]  # income, cost, utility
    decision_time: float
    shortfall_flags: dict[str, bool]
    over_budget_flags: dict[str, bool]
    forward_shortfall_flags: dict[str, bool] = field(default_factory=dict)
    seller_loss_flags: dict[str, bool] = field(default_factory=dict)
    idle_sellers: int = 0
    present_sellers: int = 0
    flagged: str = ""
    buyer_payment_items: dict[str, list[float]] = field(default_factory=dict)
    seller_income_items: dict[str, list[float]] = field(default_factory=dict)

    def money_conserved(self) -> bool:
        """Exact check that every payment a buyer made reached some seller."""
        paid = sum((Fraction(x) for items in self.buyer_payment_items.values() for x in items), Fraction(0))
        got = sum((Fraction(x) for items in self.seller_income_items.values() for x in items), Fraction(0))
        return paid == got

    @property
    def total_quality(self) -> float:
        return math.fsum(v[0] for v in self.buyer_totals.values())

    def total_buyer_payment(self) -> float:
        return math.fsum(v[1] for v in self.buyer_totals.values())

    def total_seller_income(self) -> float:
        return math.fsum(v[0] for v in self.seller_totals.values())


def spot_price(seller, buyer_id: str, scenario: Scenario, margin: float) -> float:
    """Premium one-off price on the expected Plus-level cost."""
    return contract_price(Level.PLUS, seller.base_cost[buyer_id], scenario.econ.kappa, seller.workload.expected(), margin)


def select_volunteers(fulfillment: FulfillmentOutcome, buyers: Sequence[BuyerProfile],
                      buyer_attendance: Mapping[str, bool] | None = None) -> list[str]:
    """Present buyers short of their requirement, earliest arrival first."""
    out = [b for b in buyers
           if (buyer_attendance is None or buyer_attendance[b.id])
           and fulfillment.buyer_quality.get(b.id, 0.0) < b.required_quality]
    return [b.id for b in sorted(out, key=lambda b: b.arrival_rank)]


def recruit_temporary(volunteer: BuyerProfile, pool: list[str], remaining_budget: float, realization: Realization,
                      spot_config: SpotConfig, scenario: Scenario, current_quality: float = 0.0) -> list[SpotAssignment]:
    """Greedy quality-per-price recruitment for one volunteer.

    ``pool`` is mutated: recruited sellers are removed so later volunteers
    cannot reuse them.
    """
    econ = scenario.econ
    budget = max(0.0, remaining_budget)
    quality = current_quality
    out: list[SpotAssignment] = []
    while quality < volunteer.required_quality and pool:
        best = None
        for sid in pool:
            s = scenario.seller(sid)
            price = spot_price(s, volunteer.id, scenario, spot_config.spot_margin)
            if price > budget:
                continue
            ratio = s.q_plus[volunteer.id] / price
            key = (-ratio, sid)
            if best is None or key < best[0]:
                best = (key, sid, price)
        if best is None:
            break
        _, sid, price = best
        s = scenario.seller(sid)
        load = realization.workloads[sid]
        q = realized_quality(spot_config.spot_level, s.q_plus[volunteer.id], econ.xi, load)
        cost = service_cost(spot_config.spot_level, s.base_cost[volunteer.id], econ.kappa, load)
        out.append(SpotAssignment(volunteer.id, sid, q, price, cost))
        pool.remove(sid)
        budget -= price
        quality += q
    return out


def execute_transaction(scenario: Scenario, contracts: Sequence[ForwardContract], realization: Realization,
                        spot_config: SpotConfig | None = None, method: str = "IFAST") -> TransactionOutcome:
    spot_config = spot_config or SpotConfig.from_scenario(scenario)
    ful = simulate_fulfillment(scenario, contracts, realization)

    t0 = time.perf_counter()
    volunteers = select_volunteers(ful, scenario.buyers, realization.buyer_attendance)
    busy = ful.busy_sellers()
    pool = [s.id for s in scenario.sellers if realization.seller_attendance[s.id] and s.id not in busy]
    spot: list[SpotAssignment] = []
    for bid in volunteers:
        b = scenario.buyer(bid)
        remaining = b.budget - ful.buyer_payment[bid]
        spot += recruit_temporary(b, pool, remaining, realization, spot_config, scenario, ful.buyer_quality[bid])
    decision_time = time.perf_counter() - t0

    return _totals(scenario, realization, method, ful, volunteers, spot, decision_time)


def _totals(scenario: Scenario, realization: Realization, method: str, ful: FulfillmentOutcome | None,
            volunteers: list[str], spot: list[SpotAssignment], decision_time: float, flagged: str = "") -> TransactionOutcome:
    q_items: dict[str, list[float]] = {b.id: [] for b in scenario.buyers}
    pay_items: dict[str, list[float]] = {b.id: [] for b in scenario.buyers}
    inc_items: dict[str, list[float]] = {s.id: [] for s in scenario.sellers}
    cost_items: dict[str, list[float]] = {s.id: [] for s in scenario.sellers}
    pen_items: dict[str, list[float]] = {s.id: [] for s in scenario.sellers}
    fwd_short: dict[str, bool] = {}
    fwd_loss: dict[str, bool] = {}
    if ful is not None:
        for sid, items in ful.served.items():
            for it in items:
                q_items[it.buyer_id].append(it.quality)
                pay_items[it.buyer_id].append(it.price)
                inc_items[sid].append(it.price)
                cost_items[sid].append(it.cost)
            if ful.penalties.get(sid):
                pen_items[sid].append(ful.penalties[sid])
            if items:
                fwd_loss[sid] = (math.fsum(i.price for i in items) - math.fsum(i.cost for i in items)
                                 - ful.penalties.get(sid, 0.0)) < 0
        for b in scenario.buyers:
            fwd_short[b.id] = bool(realization.buyer_attendance[b.id] and ful.buyer_quality[b.id] < b.required_quality)
    for a in spot:
        q_items[a.buyer_id].append(a.quality)
        pay_items[a.buyer_id].append(a.price)
        inc_items[a.seller_id].append(a.price)
        cost_items[a.seller_id].append(a.cost)
    buyer_totals = {}
    short, over = {}, {}
    for b in scenario.buyers:
        q = math.fsum(q_items[b.id])
        pay = math.fsum(pay_items[b.id])
        buyer_totals[b.id] = (q, pay, q)
        short[b.id] = bool(realization.buyer_attendance[b.id] and q < b.required_quality)
        fwd_pay = ful.buyer_payment[b.id] if ful is not None else pay
        over[b.id] = fwd_pay > b.budget
    seller_totals = {}
    for s in scenario.sellers:
        inc = math.fsum(inc_items[s.id])
        cost = math.fsum(cost_items[s.id])
        seller_totals[s.id] = (inc, cost, inc - cost - math.fsum(pen_items[s.id]))
    if ful is None:
        # pure spot trading: a loss is a seller whose trades cost more than they earned
        fwd_loss = {sid: seller_totals[sid][2] < 0 for sid, items in inc_items.items() if items}
    present = [s.id for s in scenario.sellers if realization.seller_attendance[s.id]]
    idle = sum(1 for sid in present if not inc_items[sid])
    return TransactionOutcome(
        method=method,
        transaction_index=realization.transaction_index,
        realization_digest=realization.digest(),
        fulfillment=ful,
        volunteers=volunteers,
        spot_assignments=spot,
        buyer_totals=buyer_totals,
        seller_totals=seller_totals,
        decision_time=decision_time,
        shortfall_flags=short,
        over_budget_flags=over,
        forward_shortfall_flags=fwd_short,
        seller_loss_flags=fwd_loss,
        idle_sellers=idle,
        present_sellers=len(present),
        flagged=flagged,
        buyer_payment_items=pay_items,
        seller_income_items=inc_items,
    )
