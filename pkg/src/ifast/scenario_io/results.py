"""Campaign artifacts on disk.

Files written by ``write_results``:

``events.csv``
    one row per (transaction, method), columns ``EVENT_COLUMNS``.  Id lists
    are ``;``-joined; floats are written with ``repr`` so they round-trip.
``summary.yaml``
    the deterministic part of the campaign report.
``plot_quality.csv``
    mean per-transaction quality per method.
``contracts.yaml``
    the forward contract set, when one was solved.
``resolved_config.yaml``
    the validated configuration with every default filled in.
``plot_decision_time.csv`` and ``timing.yaml``  (volatile)
    wall-clock measurements.
``manifest.yaml``
    sha256 of every file.  Wall-clock files are listed under ``volatile`` and
    kept out of ``digest``, so equal seeds give equal ``digest`` values.
"""
from __future__ import annotations

import csv
import hashlib
import io
from pathlib import Path
from typing import Mapping, Sequence

import yaml

EVENT_COLUMNS = (
    "transaction", "method", "realization", "quality", "payment", "buyer_utility", "seller_utility",
    "shortfall", "forward_shortfall", "over_budget", "seller_loss", "present_sellers",
    "idle_sellers", "volunteers", "spot_assignments", "flagged",
)
TIMING_COLUMNS = ("transaction", "method", "decision_time")


def _ids(flags: Mapping[str, bool]) -> str:
    return ";".join(k for k, v in sorted(flags.items()) if v)


def event_row(outcome) -> dict:
    from math import fsum

    return {
        "transaction": outcome.transaction_index,
        "method": outcome.method,
        "realization": outcome.realization_digest,
        "quality": outcome.total_quality,
        "payment": outcome.total_buyer_payment(),
        "buyer_utility": fsum(v[2] for v in outcome.buyer_totals.values()),
        "seller_utility": fsum(v[2] for v in outcome.seller_totals.values()),
        "shortfall": _ids(outcome.shortfall_flags),
        "forward_shortfall": _ids(outcome.forward_shortfall_flags),
        "over_budget": _ids(outcome.over_budget_flags),
        "seller_loss": _ids(outcome.seller_loss_flags),
        "present_sellers": outcome.present_sellers,
        "idle_sellers": outcome.idle_sellers,
        "volunteers": ";".join(outcome.volunteers),
        "spot_assignments": ";".join(f"{a.seller_id}>{a.buyer_id}" for a in outcome.spot_assignments),
        "flagged": outcome.flagged,
    }


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _csv_text(columns: Sequence[str], rows: Sequence[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _yaml_text(data) -> str:
    return yaml.safe_dump(data, sort_keys=True, default_flow_style=False)


def _write(path: Path, text: str) -> str:
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from None
    return hashlib.sha256(text.encode()).hexdigest()


def write_results(outcomes: Mapping[str, Sequence], report, out_dir, config=None, contracts=None) -> dict:
    """Persist a campaign and return the manifest mapping."""
    from .serialize import contracts_to_dict

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot create output directory {out}: {exc.strerror}") from None
    files: dict[str, str] = {}
    volatile: dict[str, str] = {}

    ordered = sorted((o for seq in outcomes.values() for o in seq), key=lambda o: (o.transaction_index, o.method))
    if ordered:
        files["events.csv"] = _write(out / "events.csv", _csv_text(EVENT_COLUMNS, [event_row(o) for o in ordered]))
        timing_rows = [{"transaction": o.transaction_index, "method": o.method, "decision_time": o.decision_time}
                       for o in ordered]
        volatile["plot_decision_time.csv"] = _write(out / "plot_decision_time.csv",
                                                    _csv_text(TIMING_COLUMNS, timing_rows))
    files["summary.yaml"] = _write(out / "summary.yaml", _yaml_text(report.deterministic_dict()))
    quality_rows = [{"method": m, "mean_quality": q} for m, q in report.mean_quality.items()]
    files["plot_quality.csv"] = _write(out / "plot_quality.csv", _csv_text(("method", "mean_quality"), quality_rows))
    if contracts is not None:
        files["contracts.yaml"] = _write(out / "contracts.yaml", _yaml_text(contracts_to_dict(contracts)))
    if config is not None:
        files["resolved_config.yaml"] = _write(out / "resolved_config.yaml", config.resolved_yaml())
    volatile["timing.yaml"] = _write(out / "timing.yaml", _yaml_text(report.timing_dict()))

    digest = hashlib.sha256("".join(f"{k}={v}\n" for k, v in sorted(files.items())).encode()).hexdigest()
    manifest = {"digest": digest, "files": files, "volatile": volatile}
    _write(out / "manifest.yaml", _yaml_text(manifest))
    return manifest


def read_events(out_dir) -> list[dict]:
    """Event rows joined with their decision times, as written by ``write_results``."""
    out = Path(out_dir)
    path = out / "events.csv"
    if not path.exists():
        return []
    times = {}
    tpath = out / "plot_decision_time.csv"
    if tpath.exists():
        with open(tpath, newline="") as fh:
            for r in csv.DictReader(fh):
                times[(int(r["transaction"]), r["method"])] = float(r["decision_time"])
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            t = int(r["transaction"])
            rows.append({
                **r,
                "transaction": t,
                "quality": float(r["quality"]),
                "payment": float(r["payment"]),
                "buyer_utility": float(r["buyer_utility"]),
                "seller_utility": float(r["seller_utility"]),
                "present_sellers": int(r["present_sellers"]),
                "idle_sellers": int(r["idle_sellers"]),
                "decision_time": times.get((t, r["method"]), float("nan")),
            })
    return rows
