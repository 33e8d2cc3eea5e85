import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from ifast.forward import build_problem, solve_sca
from ifast.market import (
    BuyerProfile,
    ContractSet,
    EconomicParams,
    ForwardContract,
    Level,
    Realization,
    Scenario,
    SellerProfile,
    TruncatedGaussianSpec,
    derive_stream,
    sample_realization,
)
from ifast.risk import simulate_fulfillment
from ifast.scenario_io.synthetic import SyntheticRanges, generate_synthetic
from ifast.spot import SpotConfig, execute_transaction, recruit_temporary, select_volunteers, spot_price

WL = TruncatedGaussianSpec(2.5, 0.5, 1.5, 3.5)
FLAT = EconomicParams(xi=0.4, kappa=0.0, forward_margin=0.0, spot_margin=0.0)


def _seller(sid, q, c, buyers, a=1.0):
    return SellerProfile(sid, a, WL, {b: q for b in buyers}, {b: c for b in buyers})


def _all_present(sc, load=2.5, absent=()):
    return Realization(0, {s.id: s.id not in absent for s in sc.sellers}, {b.id: True for b in sc.buyers},
                       {s.id: load for s in sc.sellers})


def _reference_greedy(pool, budget, deficit):
    """Independent restatement of the recruitment rule over (id, q, price) triples."""
    out, got = [], 0.0
    pool = list(pool)
    while got < deficit:
        cands = [p for p in pool if p[2] <= budget]
        if not cands:
            break
        best = min(cands, key=lambda p: (-p[1] / p[2], p[0]))
        out.append(best[0])
        pool.remove(best)
        budget -= best[2]
        got += best[1]
    return out


def test_recruit_prefers_ratio():
    buyers = ("b1",)
    sc = Scenario((_seller("sA", 4.0, 2.0, buyers), _seller("sB", 3.8, 1.7, buyers)),
                  (BuyerProfile("b1", 3.5, 9.0, 1),), FLAT).validate()
    assert spot_price(sc.seller("sA"), "b1", sc, 0.0) == 2.0 and spot_price(sc.seller("sB"), "b1", sc, 0.0) == 1.7
    pool = ["sA", "sB"]
    out = recruit_temporary(sc.buyer("b1"), pool, 3.0, _all_present(sc), SpotConfig(spot_margin=0.0), sc)
    assert [a.seller_id for a in out] == ["sB"] == _reference_greedy([("sA", 4.0, 2.0), ("sB", 3.8, 1.7)], 3.0, 3.5)
    assert pool == ["sA"]
    # brute force: among all affordable recruitment orders, the first pick has the best ratio
    firsts = {order[0] for k in (1, 2) for order in itertools.permutations([("sA", 4.0, 2.0), ("sB", 3.8, 1.7)], k)
              if sum(p[2] for p in order) <= 3.0}
    assert max(firsts, key=lambda p: p[1] / p[2])[0] == "sB"


def test_recruit_empty_pool_and_zero_budget():
    sc = Scenario((_seller("sA", 4.0, 1.0, ("b1",)),), (BuyerProfile("b1", 7.5, 9.0, 1),), FLAT).validate()
    cfg = SpotConfig(spot_margin=0.0)
    assert recruit_temporary(sc.buyer("b1"), [], 9.0, _all_present(sc), cfg, sc) == []
    assert recruit_temporary(sc.buyer("b1"), ["sA"], 0.0, _all_present(sc), cfg, sc) == []


def test_select_volunteers_order_and_filter():
    buyers = (BuyerProfile("b1", 4.0, 9.0, 3), BuyerProfile("b2", 4.0, 9.0, 1), BuyerProfile("b3", 4.0, 9.0, 2))
    sc = Scenario((_seller("s1", 4.5, 1.0, ("b1", "b2", "b3")),), buyers, FLAT).validate()
    ful = simulate_fulfillment(sc, [], _all_present(sc))
    assert select_volunteers(ful, sc.buyers) == ["b2", "b3", "b1"]
    cs = [ForwardContract("s1", "b3", Level.PLUS, 1.0)]
    ful = simulate_fulfillment(sc, cs, _all_present(sc))
    assert select_volunteers(ful, sc.buyers) == ["b2", "b1"]


def _fig3():
    bids = ("b1", "b2", "b3")
    buyers = (BuyerProfile("b1", 8.0, 9.0, 1), BuyerProfile("b2", 4.0, 9.0, 2), BuyerProfile("b3", 4.0, 9.0, 3))
    sellers = tuple(_seller(s, q, 1.0, bids) for s, q in
                    (("s1", 4.0), ("s2", 4.2), ("s4", 4.5), ("s5", 4.0), ("s8", 4.4)))
    sc = Scenario(sellers, buyers, EconomicParams()).validate()
    cs = ContractSet([
        ForwardContract("s1", "b3", Level.PLUS, 2.0),
        ForwardContract("s2", "b3", Level.PLUS, 2.0),
        ForwardContract("s4", "b1", Level.PLUS, 2.0),
        ForwardContract("s4", "b2", Level.PLUS, 2.0),
        ForwardContract("s5", "b1", Level.PLUS, 2.0),
    ])
    return sc, cs, _all_present(sc, absent=("s1",))


def test_fig3_volunteer_and_temporary_seller():
    sc, cs, real = _fig3()
    out = execute_transaction(sc, cs, real)
    assert out.volunteers == ["b2"]
    assert [(a.buyer_id, a.seller_id) for a in out.spot_assignments] == [("b2", "s8")]
    assert out.buyer_totals["b2"][0] == pytest.approx(4.4)
    assert not out.shortfall_flags["b2"] and out.forward_shortfall_flags["b2"]
    assert out.money_conserved()


def test_no_volunteers_when_forward_suffices():
    sc, cs, real = _fig3()
    cs = ContractSet([c for c in cs if c.buyer_id != "b2"] + [ForwardContract("s8", "b2", Level.PLUS, 2.0)])
    out = execute_transaction(sc, cs, _all_present(sc))
    assert out.volunteers == [] and out.spot_assignments == []


def _ledger(outcome):
    paid = sum(p for items in outcome.buyer_payment_items.values() for p in items)
    got = sum(p for items in outcome.seller_income_items.values() for p in items)
    return paid, got


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.integers(0, 50))
def test_transaction_properties(seed, t):
    sc = generate_synthetic(8, 3, seed % 7, SyntheticRanges(attendance=(0.4, 1.0), buyer_attendance=(0.7, 1.0)))
    cs = ContractSet(
        ForwardContract(s.id, b.id, Level.PLUS if (i + j) % 2 else Level.MINUS, 1.5 + 0.1 * j)
        for i, s in enumerate(sc.sellers) for j, b in enumerate(sc.buyers) if (i * 7 + j * 3 + seed) % 4 == 0
    )
    real = sample_realization(sc, derive_stream(seed, "realization", t), t)
    out = execute_transaction(sc, cs, real)
    # exact money conservation and an independent ledger recomputation
    assert out.money_conserved()
    ind_paid = math.fsum(it.price for items in out.fulfillment.served.values() for it in items) + \
        math.fsum(a.price for a in out.spot_assignments)
    assert math.fsum(v[1] for v in out.buyer_totals.values()) == pytest.approx(ind_paid)
    assert math.fsum(v[0] for v in out.seller_totals.values()) == pytest.approx(ind_paid)
    busy = out.fulfillment.busy_sellers()
    spot_sellers = [a.seller_id for a in out.spot_assignments]
    # temporary sellers are present, idle in the forward phase, and used once
    assert len(spot_sellers) == len(set(spot_sellers))
    assert not busy & set(spot_sellers)
    assert all(real.seller_attendance[s] for s in spot_sellers)
    for b in sc.buyers:
        spot_pay = math.fsum(a.price for a in out.spot_assignments if a.buyer_id == b.id)
        remaining = max(0.0, b.budget - out.fulfillment.buyer_payment[b.id])
        assert spot_pay <= remaining + 1e-9
    # FCFS: volunteers appear in arrival order, spot service follows that order
    ranks = [sc.buyer(v).arrival_rank for v in out.volunteers]
    assert ranks == sorted(ranks)
    order = [a.buyer_id for a in out.spot_assignments]
    assert order == sorted(order, key=lambda b: sc.buyer(b).arrival_rank)
    for sid, items in out.fulfillment.served.items():
        assert len(items) <= sc.seller(sid).capacity


def test_fcfs_fairness_later_volunteer_never_gets_earlier_pick():
    sc = generate_synthetic(10, 3, 4)
    real = Realization(0, {s.id: True for s in sc.sellers}, {b.id: True for b in sc.buyers},
                       {s.id: 2.5 for s in sc.sellers})
    out = execute_transaction(sc, [], real)
    first = out.volunteers[0]
    pool = [s.id for s in sc.sellers]
    alone = recruit_temporary(sc.buyer(first), pool, sc.buyer(first).budget, real, SpotConfig.from_scenario(sc), sc)
    later = {a.seller_id for a in out.spot_assignments if a.buyer_id != first}
    assert not later & {a.seller_id for a in alone}


def test_execute_is_pure_apart_from_timing():
    sc = generate_synthetic(8, 3, 2)
    res = solve_sca(build_problem(sc, mc_samples=300))
    real = sample_realization(sc, derive_stream(1, "realization", 0), 0)
    a = execute_transaction(sc, res.contracts, real)
    b = execute_transaction(sc, res.contracts, real)
    a.decision_time = b.decision_time = 0.0
    assert a == b


def test_spot_config_rejects_bad_values():
    with pytest.raises(ValueError):
        SpotConfig(spot_margin=-0.1)
    with pytest.raises(ValueError):
        SpotConfig(eligibility="anyone")
