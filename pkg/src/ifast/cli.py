"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 infeasible, 4 resource guard.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .market import ValidationError, derive_stream, sample_realization
from .risk import CapacityError

EXIT_OK, EXIT_VALIDATION, EXIT_INFEASIBLE, EXIT_GUARD = 0, 2, 3, 4


def _print(data) -> None:
    sys.stdout.write(yaml.safe_dump(data, sort_keys=False, default_flow_style=False))


def cmd_optimize(args) -> int:
    from .forward import build_problem, solve_exact_ie, solve_sca
    from .scenario_io.serialize import load_scenario, save_contracts

    sc = load_scenario(args.scenario)
    problem = build_problem(sc, mc_samples=args.samples, seed=args.seed)
    if args.solver == "exact":
        res = solve_exact_ie(problem, max_sellers=args.max_sellers)
    else:
        res = solve_sca(problem, certify_seed=args.seed + 1)
    save_contracts(res.contracts, args.out)
    _print(res.summary())
    return EXIT_OK if res.feasible else EXIT_INFEASIBLE


def cmd_simulate(args) -> int:
    from .campaign import aggregate_metrics
    from .scenario_io.results import write_results
    from .scenario_io.serialize import load_contracts, load_scenario
    from .spot import execute_transaction

    sc = load_scenario(args.scenario)
    contracts = load_contracts(args.contracts).validate(sc)
    outs = [execute_transaction(sc, contracts, sample_realization(sc, derive_stream(args.seed, "realization", t), t))
            for t in range(args.transactions)]
    report = aggregate_metrics({"IFAST": outs}, [b.id for b in sc.buyers], [s.id for s in sc.sellers])
    manifest = write_results({"IFAST": outs}, report, args.out, contracts=contracts)
    _print({"mean_quality": report.mean_quality, "idle_rate": report.idle_rate, "digest": manifest["digest"]})
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .campaign import run_campaign
    from .scenario_io.config import load_validate_config

    cfg = load_validate_config(args.config)
    res = run_campaign(cfg, out_dir=args.out)
    rep = res.report
    _print({
        "transactions": rep.transactions,
        "mean_quality": rep.mean_quality,
        "median_decision_time": {m: v["median"] for m, v in rep.decision_time.items()},
        "forward": rep.forward,
        "forward_solve_time": rep.forward_solve_time,
        "output_dir": str(args.out or cfg.output_dir),
        "digest": res.manifest["digest"],
    })
    if rep.forward and not rep.forward.get("feasible", True):
        print(rep.forward.get("diagnostic", "forward problem infeasible"), file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_ingest(args) -> int:
    from .scenario_io.serialize import save_scenario
    from .scenario_io.trips import BuyerSpec, IngestionConfig, ingest_taxi_trace, parse_window, read_trips

    cfg = IngestionConfig(poi_area=args.poi, window=parse_window(args.window) if args.window else None,
                          cost_range=(args.cost_lo, args.cost_hi), sellers=args.sellers, seed=args.seed)
    reader = read_trips(args.trips)
    sc = ingest_taxi_trace(reader, cfg, BuyerSpec(buyers=args.buyers))
    save_scenario(sc, args.out)
    _print({"sellers": len(sc.sellers), "buyers": len(sc.buyers), "rows_read": reader.read,
            "rows_skipped": reader.skipped, "out": str(args.out)})
    return EXIT_OK


def cmd_risk(args) -> int:
    from .risk import compute_risks_exact, estimate_risks_mc
    from .scenario_io.serialize import load_contracts, load_scenario

    sc = load_scenario(args.scenario)
    contracts = load_contracts(args.contracts).validate(sc)
    if args.backend == "exact":
        rep = compute_risks_exact(sc, contracts)
    else:
        rep = estimate_risks_mc(sc, contracts, args.samples, args.seed)
    _print({**rep.to_dict(), "within_bounds": rep.within(sc.risk_bounds)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ifast", description="Hybrid forward/spot trading for mobile crowdsensing.")
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", help="solve the forward contract problem")
    o.add_argument("--scenario", required=True, type=Path)
    o.add_argument("--solver", choices=("sca", "exact"), default="sca")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--samples", type=int, default=2000, help="Monte Carlo samples for the risk path")
    o.add_argument("--max-sellers", type=int, default=10, help="exact solver size guard")
    o.add_argument("--out", required=True, type=Path)
    o.set_defaults(func=cmd_optimize)

    s = sub.add_parser("simulate", help="replay transactions under a contract set")
    s.add_argument("--scenario", required=True, type=Path)
    s.add_argument("--contracts", required=True, type=Path)
    s.add_argument("--transactions", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("benchmark", help="full campaign over every configured method")
    b.add_argument("--config", required=True, type=Path)
    b.add_argument("--out", type=Path, default=None, help="overrides output_dir from the config")
    b.set_defaults(func=cmd_benchmark)

    i = sub.add_parser("ingest", help="build a scenario from a taxi-trip CSV")
    i.add_argument("--trips", required=True, type=Path)
    i.add_argument("--poi", type=int, default=77)
    i.add_argument("--window", default=None, help="YYYY-MM-DD..YYYY-MM-DD, inclusive")
    i.add_argument("--sellers", type=int, default=20)
    i.add_argument("--buyers", type=int, default=10)
    i.add_argument("--cost-lo", type=float, default=1.0)
    i.add_argument("--cost-hi", type=float, default=1.5)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True, type=Path)
    i.set_defaults(func=cmd_ingest)

    r = sub.add_parser("risk", help="risk report for a contract set")
    r.add_argument("--scenario", required=True, type=Path)
    r.add_argument("--contracts", required=True, type=Path)
    r.add_argument("--backend", choices=("mc", "exact"), default="mc")
    r.add_argument("--samples", type=int, default=10000)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_risk)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("transactions", "samples"):
        if getattr(args, name, 1) is not None and getattr(args, name, 1) < 1:
            print(f"error: --{name} must be >= 1", file=sys.stderr)
            return EXIT_VALIDATION
    try:
        return args.func(args)
    except ValidationError as exc:
        for line in exc.problems:
            print(f"validation error: {line}", file=sys.stderr)
        return EXIT_VALIDATION
    except CapacityError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except FileNotFoundError as exc:
        print(f"validation error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
