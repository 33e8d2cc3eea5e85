"""Campaign replay: one forward solve, T shared realizations, every method.

Metric definitions used by ``aggregate_rows``:

* mean quality: arithmetic mean over transactions of total delivered quality;
* decision time: mean, and nearest-rank median and 95th percentile
  (the value at position ``ceil(p * n)`` of the sorted series);
* risk frequencies: flagged transactions divided by T, per buyer or seller;
* idle rate: idle present sellers summed over the campaign divided by
  present sellers summed over the campaign.

For IFAST the seller-loss flag is the forward settlement's loss; for the
spot-only baselines it marks a seller whose spot trades lost money.
"""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import yaml

from .benchmarks import MethodTag, run_improve_ie, run_mc_random, run_quality_prefer, run_spot_datad
from .forward import build_problem, solve_exact_ie, solve_sca
from .forward.sca import SCAParams
from .market import RiskBounds, Scenario, derive_stream, sample_realization
from .scenario_io.config import ALL_METHODS, CampaignConfig
from .scenario_io.results import event_row, write_results
from .scenario_io.serialize import load_scenario
from .scenario_io.synthetic import SyntheticRanges, generate_synthetic
from .spot import execute_transaction


class AggregationError(ValueError):
    pass


def nearest_rank(values: Sequence[float], p: float) -> float:
    if not values:
        raise AggregationError("percentile of an empty series")
    s = sorted(values)
    k = max(1, math.ceil(p / 100.0 * len(s)))
    return s[k - 1]


@dataclass
class CampaignReport:
    transactions: int
    methods: list[str]
    mean_quality: dict[str, float]
    decision_time: dict[str, dict[str, float]]
    shortfall_freq: dict[str, dict[str, float]]
    forward_shortfall_freq: dict[str, dict[str, float]]
    over_budget_freq: dict[str, dict[str, float]]
    seller_loss_freq: dict[str, dict[str, float]]
    idle_rate: dict[str, float]
    buyer_utility_total: dict[str, float]
    seller_utility_total: dict[str, float]
    flagged: dict[str, int]
    realization_parity: bool
    forward: dict = field(default_factory=dict)
    forward_solve_time: float | None = None

    def deterministic_dict(self) -> dict:
        return {
            "transactions": self.transactions,
            "methods": list(self.methods),
            "mean_quality": dict(self.mean_quality),
            "shortfall_freq": self.shortfall_freq,
            "forward_shortfall_freq": self.forward_shortfall_freq,
            "over_budget_freq": self.over_budget_freq,
            "seller_loss_freq": self.seller_loss_freq,
            "idle_rate": dict(self.idle_rate),
            "buyer_utility_total": dict(self.buyer_utility_total),
            "seller_utility_total": dict(self.seller_utility_total),
            "flagged": dict(self.flagged),
            "realization_parity": self.realization_parity,
            "forward": dict(self.forward),
        }

    def timing_dict(self) -> dict:
        return {"decision_time": self.decision_time, "forward_solve_time": self.forward_solve_time}

    def digest(self) -> str:
        text = yaml.safe_dump(self.deterministic_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()


def _freq(rows: Sequence[Mapping], column: str, ids: Sequence[str]) -> dict[str, float]:
    counts = dict.fromkeys(ids, 0)
    for r in rows:
        for k in filter(None, r[column].split(";")):
            counts[k] = counts.get(k, 0) + 1
    return {k: counts[k] / len(rows) for k in sorted(counts)}


def aggregate_rows(rows_by_method: Mapping[str, Sequence[Mapping]], buyers: Sequence[str],
                   sellers: Sequence[str]) -> CampaignReport:
    """Campaign metrics from event-log rows (see ``scenario_io.results``)."""
    if not rows_by_method:
        return CampaignReport(0, [], {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, True)
    lengths = {m: len(r) for m, r in rows_by_method.items()}
    if len(set(lengths.values())) != 1:
        raise AggregationError(f"methods have different transaction counts: {lengths}")
    T = next(iter(lengths.values()))
    if T == 0:
        raise AggregationError("no transactions to aggregate")
    # canonical order so the report does not depend on how the logs were grouped
    rank = {m: i for i, m in enumerate(ALL_METHODS)}
    methods = sorted(rows_by_method, key=lambda m: (rank.get(m, len(rank)), m))
    rep = CampaignReport(T, methods, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, True)
    digests = None
    for m in methods:
        rows = sorted(rows_by_method[m], key=lambda r: r["transaction"])
        seq = [r["realization"] for r in rows]
        digests = digests or seq
        rep.realization_parity &= seq == digests
        rep.mean_quality[m] = math.fsum(r["quality"] for r in rows) / T
        times = [r["decision_time"] for r in rows]
        rep.decision_time[m] = {"mean": math.fsum(times) / T, "median": nearest_rank(times, 50),
                                "p95": nearest_rank(times, 95)}
        rep.shortfall_freq[m] = _freq(rows, "shortfall", buyers)
        rep.forward_shortfall_freq[m] = _freq(rows, "forward_shortfall", buyers)
        rep.over_budget_freq[m] = _freq(rows, "over_budget", buyers)
        rep.seller_loss_freq[m] = _freq(rows, "seller_loss", sellers)
        present = sum(r["present_sellers"] for r in rows)
        rep.idle_rate[m] = sum(r["idle_sellers"] for r in rows) / present if present else 0.0
        rep.buyer_utility_total[m] = math.fsum(r["buyer_utility"] for r in rows)
        rep.seller_utility_total[m] = math.fsum(r["seller_utility"] for r in rows)
        rep.flagged[m] = sum(1 for r in rows if r["flagged"])
    return rep


def aggregate_metrics(outcomes: Mapping[str, Sequence], buyers: Sequence[str] = (),
                      sellers: Sequence[str] = ()) -> CampaignReport:
    rows = {}
    for m, seq in outcomes.items():
        rows[m] = []
        for o in seq:
            r = event_row(o)
            r["decision_time"] = o.decision_time
            rows[m].append(r)
    return aggregate_rows(rows, buyers, sellers)


@dataclass
class CampaignResult:
    report: CampaignReport
    outcomes: dict[str, list]
    scenario: Scenario
    contracts: object = None
    manifest: dict | None = None


def scenario_for(config: CampaignConfig) -> Scenario:
    src = config.scenario
    if src.file is not None:
        sc = load_scenario(src.file)
    else:
        syn = src.synthetic
        seed = config.seed if syn.seed is None else syn.seed
        sc = generate_synthetic(syn.sellers, syn.buyers, seed, SyntheticRanges.from_dict(syn.ranges))
    # the campaign's risk bounds always govern
    rb = config.risk_bounds
    return Scenario(sc.sellers, sc.buyers, sc.econ, RiskBounds(rb.eps_shortfall, rb.eps_budget, rb.eps_seller_loss),
                    sc.limits).validate()


def solve_forward(scenario: Scenario, config: CampaignConfig):
    s = config.solver
    problem = build_problem(scenario, mc_samples=s.mc_samples, seed=config.seed if s.seed is None else s.seed)
    if s.name == "exact":
        return solve_exact_ie(problem, max_sellers=s.exact.max_sellers, max_nodes=s.exact.max_nodes)
    return solve_sca(problem, SCAParams(**s.sca.model_dump()))


def run_campaign(config: CampaignConfig, out_dir=None, write: bool = True) -> CampaignResult:
    scenario = scenario_for(config)
    methods = [MethodTag.parse(m) for m in config.methods]
    T = config.transactions
    realizations = [sample_realization(scenario, derive_stream(config.seed, "realization", t), t) for t in range(T)]

    outcomes: dict[str, list] = {}
    forward: dict = {}
    forward_time = None
    contracts = None
    if MethodTag.IFAST in methods:
        t0 = time.perf_counter()
        res = solve_forward(scenario, config)
        forward_time = time.perf_counter() - t0
        forward = {"solver": res.solver, "feasible": bool(res.feasible), "objective": float(res.objective),
                   "contracts": len(res.contracts), "converged": bool(res.converged)}
        if res.feasible:
            contracts = res.contracts
            outcomes[MethodTag.IFAST.value] = [execute_transaction(scenario, contracts, r) for r in realizations]
        else:
            forward["diagnostic"] = ("forward problem infeasible at the configured risk bounds; "
                                     "IFAST skipped, baselines still run")
    for m in methods:
        if m is MethodTag.SPOT_DATAD:
            outcomes[m.value] = [run_spot_datad(scenario, r) for r in realizations]
        elif m is MethodTag.IMPROVE_IE:
            outcomes[m.value] = [run_improve_ie(scenario, r) for r in realizations]
        elif m is MethodTag.QUALITY_PREFER:
            outcomes[m.value] = [run_quality_prefer(scenario, r) for r in realizations]
        elif m is MethodTag.MC_RANDOM:
            outcomes[m.value] = [run_mc_random(scenario, r, derive_stream(config.seed, "mcrandom", r.transaction_index))
                                 for r in realizations]

    report = aggregate_metrics(outcomes, [b.id for b in scenario.buyers], [s.id for s in scenario.sellers])
    report.forward = forward
    report.forward_solve_time = forward_time
    result = CampaignResult(report, outcomes, scenario, contracts)
    if write:
        result.manifest = write_results(outcomes, report, out_dir or config.output_dir, config, contracts)
    return result
