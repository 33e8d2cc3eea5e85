import itertools
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from ifast.market import (
    BuyerProfile,
    ContractSet,
    ForwardContract,
    Level,
    Realization,
    RiskBounds,
    Scenario,
    SellerProfile,
    TruncatedGaussianSpec,
    ValidationError,
    contract_price,
    derive_stream,
    sample_realization,
)
from ifast.risk import (
    CAPACITY_EXCEEDED,
    SELLER_ABSENT,
    CapacityError,
    RiskReport,
    SamplePath,
    compute_risks_exact,
    estimate_risks_mc,
    expected_buyer_quality,
    simulate_fulfillment,
)
from ifast.scenario_io.synthetic import generate_synthetic

WL = TruncatedGaussianSpec(2.5, 0.5, 1.5, 3.5)


def _scenario(sellers, buyers=None, **kw):
    buyers = buyers or (BuyerProfile("b1", 7.5, 9.0, 1),)
    return Scenario(tuple(sellers), tuple(buyers), **kw).validate()


def _seller(sid, a=1.0, q=4.0, c=1.0, buyers=("b1",), cap=1):
    return SellerProfile(sid, a, WL, {b: q for b in buyers}, {b: c for b in buyers}, cap)


def _plus(sc, sid, bid, penalty=0.0):
    s = sc.seller(sid)
    return ForwardContract(sid, bid, Level.PLUS,
                           contract_price(Level.PLUS, s.base_cost[bid], sc.econ.kappa, s.workload.expected(),
                                          sc.econ.forward_margin), penalty)


def _real(sc, present=None, buyers=None, load=2.5, t=0):
    present = present or {}
    buyers = buyers or {}
    return Realization(t, {s.id: present.get(s.id, True) for s in sc.sellers},
                       {b.id: buyers.get(b.id, True) for b in sc.buyers}, {s.id: load for s in sc.sellers})


# ---- fulfillment -----------------------------------------------------------

def test_fcfs_capacity_keeps_earlier_buyer():
    b = (BuyerProfile("b1", 7.5, 9.0, 1), BuyerProfile("b2", 7.5, 9.0, 2))
    sc = _scenario([_seller("s1", buyers=("b1", "b2"))], b)
    cs = ContractSet([_plus(sc, "s1", "b2"), _plus(sc, "s1", "b1")])
    out = simulate_fulfillment(sc, cs, _real(sc))
    assert [i.buyer_id for i in out.served["s1"]] == ["b1"]
    assert ("s1", "b2", CAPACITY_EXCEEDED) in out.unserved_contracts
    assert out.buyer_quality == {"b1": 4.0, "b2": 0.0}


def test_absent_seller_pays_nothing():
    sc = _scenario([_seller("s1")])
    out = simulate_fulfillment(sc, [_plus(sc, "s1", "b1")], _real(sc, present={"s1": False}))
    assert out.unserved_contracts == [("s1", "b1", SELLER_ABSENT)]
    assert out.buyer_payment["b1"] == 0.0 and out.served["s1"] == []


def test_no_contracts_empty_outcome():
    sc = _scenario([_seller("s1")])
    out = simulate_fulfillment(sc, [], _real(sc))
    assert out.buyer_quality == {"b1": 0.0} and not out.unserved_contracts


def test_dangling_reference_rejected():
    sc = _scenario([_seller("s1")])
    with pytest.raises(ValidationError):
        estimate_risks_mc(sc, [ForwardContract("s9", "b1", Level.PLUS, 2.0, 0.0)], 10, 0)


def test_penalty_only_for_turned_away_buyer():
    b = (BuyerProfile("b1", 7.5, 9.0, 1), BuyerProfile("b2", 7.5, 9.0, 2))
    sc = _scenario([_seller("s1", buyers=("b1", "b2"))], b)
    cs = [_plus(sc, "s1", "b1", 0.5), _plus(sc, "s1", "b2", 0.7)]
    assert simulate_fulfillment(sc, cs, _real(sc)).penalties["s1"] == 0.7
    assert simulate_fulfillment(sc, cs, _real(sc, buyers={"b2": False})).penalties["s1"] == 0.0


# ---- risk oracles ----------------------------------------------------------

def _shortfall_instance():
    return _scenario([_seller("s1", 0.5), _seller("s2", 0.5)])


def test_shortfall_instance_exact_and_mc():
    sc = _shortfall_instance()
    cs = [_plus(sc, "s1", "b1"), _plus(sc, "s2", "b1")]
    assert compute_risks_exact(sc, cs).shortfall["b1"] == pytest.approx(0.75, abs=1e-12)
    assert estimate_risks_mc(sc, cs, 10_000, 1).shortfall["b1"] == pytest.approx(0.75, abs=0.02)


def test_over_budget_binomial():
    sellers = [_seller(f"s{i}", 0.5) for i in range(1, 6)]
    b = (BuyerProfile("b1", 7.5, 8.0, 1),)
    sc = _scenario(sellers, b)
    cs = [ForwardContract(f"s{i}", "b1", Level.PLUS, 1.8, 0.0) for i in range(1, 6)]
    # only the all-present outcome pays 9 > 8
    oracle = sum(math.prod(0.5 for _ in bits) for bits in itertools.product((0, 1), repeat=5)
                 if 1.8 * sum(bits) > 8.0)
    assert oracle == 0.03125
    assert compute_risks_exact(sc, cs).over_budget["b1"] == pytest.approx(oracle, abs=1e-12)
    assert estimate_risks_mc(sc, cs, 10_000, 2).over_budget["b1"] == pytest.approx(oracle, abs=0.01)


def test_plus_loss_threshold_beyond_support():
    sc = _scenario([_seller("s1", 0.9, c=1.2)])
    cs = [_plus(sc, "s1", "b1")]
    assert cs[0].price == pytest.approx(2.125)
    # loss requires 1.2 + 0.2 l > 2.125, i.e. l > 4.625 > hi
    assert (2.125 - 1.2) / 0.2 == pytest.approx(4.625)
    assert compute_risks_exact(sc, cs).seller_loss["s1"] == 0.0
    assert estimate_risks_mc(sc, cs, 5000, 0).seller_loss["s1"] == 0.0


def test_exact_sure_and_impossible_events():
    sc = _scenario([_seller("s1", 1.0, q=4.0), _seller("s2", 1.0, q=4.0)])
    assert compute_risks_exact(sc, [_plus(sc, "s1", "b1"), _plus(sc, "s2", "b1")]).shortfall["b1"] == 0.0
    sc1 = _scenario([_seller("s1", 0.7, q=4.0)])
    assert compute_risks_exact(sc1, [_plus(sc1, "s1", "b1")]).shortfall["b1"] == 1.0


def test_exact_guard():
    sellers = [_seller(f"s{i:02d}", 0.5) for i in range(16)]
    sc = _scenario(sellers)
    cs = [_plus(sc, s.id, "b1") for s in sellers]
    with pytest.raises(CapacityError, match="15"):
        compute_risks_exact(sc, cs)


def test_expected_quality_linearity():
    one = _scenario([_seller("s1", 0.5)])
    assert expected_buyer_quality(one, [_plus(one, "s1", "b1")], "exact")["b1"] == pytest.approx(2.0)
    two = _scenario([_seller("s1", 0.5), _seller("s2", 0.5)])
    cs = [_plus(two, "s1", "b1"), _plus(two, "s2", "b1")]
    # enumeration of four attendance outcomes
    oracle = sum(0.25 * 4.0 * (x + y) for x in (0, 1) for y in (0, 1))
    assert expected_buyer_quality(two, cs, "exact")["b1"] == pytest.approx(oracle)
    zero = _scenario([_seller("s1", 0.0)])
    assert expected_buyer_quality(zero, [_plus(zero, "s1", "b1")], "exact")["b1"] == 0.0


def test_samples_zero_rejected():
    sc = _shortfall_instance()
    with pytest.raises(ValueError):
        estimate_risks_mc(sc, [], 0, 0)


def test_report_roundtrip():
    sc = _shortfall_instance()
    r = estimate_risks_mc(sc, [_plus(sc, "s1", "b1")], 100, 3)
    assert RiskReport.from_dict(r.to_dict()) == r


def test_minus_shortfall_against_quadrature():
    from oracles import tn_cdf

    sc = _scenario([_seller("s1", 1.0, q=4.5), _seller("s2", 1.0, q=4.0)])
    p2 = _plus(sc, "s2", "b1")
    m1 = ForwardContract("s1", "b1", Level.MINUS, 1.25, 0.0)
    # 4.0 + 4.5 - 0.4 l < 7.5  <=>  l > 2.5
    oracle = 1 - tn_cdf(2.5)
    assert compute_risks_exact(sc, [m1, p2], grid_points=64).shortfall["b1"] == pytest.approx(oracle, abs=1 / 64)
    assert compute_risks_exact(sc, [m1, p2], grid_points=512).shortfall["b1"] == pytest.approx(oracle, abs=1 / 512)


# ---- properties ------------------------------------------------------------

def _random_instance(seed, m, n, picks):
    sc = generate_synthetic(m, n, seed)
    sc = Scenario(sc.sellers, sc.buyers, sc.econ, RiskBounds(), sc.limits)
    contracts = []
    for (i, j, lvl) in picks:
        s, b = sc.sellers[i % m], sc.buyers[j % n]
        if any(c.seller_id == s.id and c.buyer_id == b.id for c in contracts):
            continue
        level = Level.PLUS if lvl else Level.MINUS
        price = contract_price(level, s.base_cost[b.id], sc.econ.kappa, s.workload.expected(), sc.econ.forward_margin)
        contracts.append(ForwardContract(s.id, b.id, level, price, 0.0))
    return sc, ContractSet(contracts)


picks = st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2), st.booleans()), min_size=1, max_size=8)


@settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 10_000), m=st.integers(1, 6), n=st.integers(1, 3), picks=picks)
def test_mc_agrees_with_exact(seed, m, n, picks):
    sc, cs = _random_instance(seed, m, n, picks)
    exact = compute_risks_exact(sc, cs, grid_points=256)
    mc = estimate_risks_mc(sc, cs, 10_000, seed)
    for fam in ("shortfall", "over_budget", "seller_loss"):
        for k, v in getattr(exact, fam).items():
            assert abs(getattr(mc, fam)[k] - v) <= 0.03, (fam, k)
    for k, v in exact.expected_quality.items():
        assert mc.expected_quality[k] == pytest.approx(v, abs=0.15)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(2, 6), n=st.integers(1, 3), picks=picks)
def test_adding_contract_never_raises_shortfall(seed, m, n, picks):
    sc, cs = _random_instance(seed, m, n, picks)
    if len(cs) < 2:
        return
    path = SamplePath(sc, 500, seed)
    fewer = ContractSet(cs[:-1])
    # capacity can move another buyer's service; restrict to sellers with spare capacity
    extra = cs[-1]
    if any(c.seller_id == extra.seller_id for c in fewer):
        return
    a = estimate_risks_mc(sc, fewer, 500, seed, path)
    b = estimate_risks_mc(sc, cs, 500, seed, path)
    assert b.shortfall[extra.buyer_id] <= a.shortfall[extra.buyer_id]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 6), n=st.integers(1, 3), picks=picks)
def test_mc_matches_fulfillment_per_sample(seed, m, n, picks):
    sc, cs = _random_instance(seed, m, n, picks)
    S = 40
    path = SamplePath(sc, S, seed)
    report = estimate_risks_mc(sc, cs, S, seed, path)
    short = dict.fromkeys(sc.buyer_index, 0)
    over = dict.fromkeys(sc.buyer_index, 0)
    for i in range(S):
        r = Realization(i, {s.id: bool(path.seller_present[i, j]) for j, s in enumerate(sc.sellers)},
                        {b.id: bool(path.buyer_present[i, j]) for j, b in enumerate(sc.buyers)},
                        {s.id: float(path.workloads[i, j]) for j, s in enumerate(sc.sellers)})
        out = simulate_fulfillment(sc, cs, r)
        # forward money conservation
        assert math.fsum(out.buyer_payment.values()) == pytest.approx(
            math.fsum(it.price for items in out.served.values() for it in items))
        for b in sc.buyers:
            short[b.id] += r.buyer_attendance[b.id] and out.buyer_quality[b.id] < b.required_quality
            over[b.id] += out.buyer_payment[b.id] > b.budget
    for b in sc.buyers:
        assert report.shortfall[b.id] == short[b.id] / S
        assert report.over_budget[b.id] == over[b.id] / S


def test_mc_is_pure():
    sc, cs = _random_instance(4, 5, 2, [(0, 0, True), (1, 1, False), (2, 0, True)])
    assert estimate_risks_mc(sc, cs, 300, 9) == estimate_risks_mc(sc, cs, 300, 9)


def test_probabilities_in_unit_interval():
    sc, cs = _random_instance(8, 6, 3, [(i, i, i % 2 == 0) for i in range(6)])
    for rep in (compute_risks_exact(sc, cs), estimate_risks_mc(sc, cs, 200, 0)):
        for fam in (rep.shortfall, rep.over_budget, rep.seller_loss):
            assert all(0.0 <= v <= 1.0 for v in fam.values())
