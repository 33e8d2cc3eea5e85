"""Taxi-trip traces to seller populations.

Trip files are CSV with header
``vehicle_id,start_timestamp,pickup_area,dropoff_area,trip_miles`` and
ISO-8601 timestamps.  A vehicle counts as present on a day when any of its
trips that day starts or ends in the point-of-interest area.
"""
from __future__ import annotations

import calendar
import csv
import datetime as dt
import hashlib
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ..market import (
    BuyerProfile,
    EconomicParams,
    RiskBounds,
    Scenario,
    SellerProfile,
    StructuralLimits,
    TruncatedGaussianSpec,
    ValidationError,
    derive_stream,
)
from .synthetic import SyntheticRanges

TRIP_COLUMNS = ("vehicle_id", "start_timestamp", "pickup_area", "dropoff_area", "trip_miles")


class IngestionError(ValidationError):
    pass


@dataclass(frozen=True)
class TripRecord:
    vehicle_id: str
    start_timestamp: dt.datetime
    pickup_area: int
    dropoff_area: int
    trip_miles: float

    def __post_init__(self):
        if self.pickup_area < 1 or self.dropoff_area < 1:
            raise ValueError("area codes must be positive")
        if not self.trip_miles >= 0:
            raise ValueError("trip_miles must be >= 0")

    def touches(self, area: int) -> bool:
        return self.pickup_area == area or self.dropoff_area == area

    @classmethod
    def from_row(cls, row: dict) -> "TripRecord":
        return cls(
            vehicle_id=str(row["vehicle_id"]).strip(),
            start_timestamp=dt.datetime.fromisoformat(str(row["start_timestamp"]).strip()),
            pickup_area=int(row["pickup_area"]),
            dropoff_area=int(row["dropoff_area"]),
            trip_miles=float(row["trip_miles"]),
        )

    def to_row(self) -> list:
        return [self.vehicle_id, self.start_timestamp.isoformat(), self.pickup_area, self.dropoff_area,
                repr(self.trip_miles)]


@dataclass(frozen=True)
class IngestionConfig:
    poi_area: int = 77
    window: tuple[dt.date, dt.date] | None = None  # inclusive; None = calendar month of the first trip
    cost_range: tuple[float, float] = (1.0, 1.5)
    sellers: int = 20
    selection: str = "most-active"
    jitter: float = 0.05  # per-buyer cost jitter as a fraction of the cost range
    seed: int = 0

    def check(self) -> list[str]:
        out = []
        lo, hi = self.cost_range
        if not lo < hi:
            out.append(f"cost_range must satisfy c_lo < c_hi, got {list(self.cost_range)}")
        if self.window is not None and self.window[0] > self.window[1]:
            out.append(f"window is empty: {self.window[0]} > {self.window[1]}")
        if self.poi_area < 1:
            out.append("poi_area must be a positive community-area code")
        if self.sellers < 1:
            out.append("sellers must be >= 1")
        if self.selection != "most-active":
            out.append(f"unknown selection rule {self.selection!r}")
        if not 0 <= self.jitter <= 1:
            out.append("jitter must lie in [0, 1]")
        return out


@dataclass(frozen=True)
class BuyerSpec:
    buyers: int = 10
    ranges: SyntheticRanges = field(default_factory=SyntheticRanges)


class TripReader:
    """Streams records from a trip CSV; malformed rows are skipped and counted."""

    def __init__(self, path):
        self.path = Path(path)
        self.skipped = 0
        self.read = 0

    def __iter__(self) -> Iterator[TripRecord]:
        with open(self.path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in TRIP_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise IngestionError([f"{self.path}: missing column {c!r}" for c in missing])
            for row in reader:
                try:
                    rec = TripRecord.from_row(row)
                except (ValueError, TypeError, KeyError):
                    self.skipped += 1
                    continue
                self.read += 1
                yield rec
        if self.skipped:
            warnings.warn(f"{self.path}: skipped {self.skipped} malformed row(s)", RuntimeWarning, stacklevel=2)


def read_trips(path) -> TripReader:
    return TripReader(path)


def write_trips(records: Iterable[TripRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIP_COLUMNS)
        for r in records:
            w.writerow(r.to_row())
    return path


def parse_window(text: str) -> tuple[dt.date, dt.date]:
    """``YYYY-MM-DD..YYYY-MM-DD`` (inclusive)."""
    try:
        a, b = text.split("..")
        return dt.date.fromisoformat(a.strip()), dt.date.fromisoformat(b.strip())
    except ValueError:
        raise ValidationError([f"window {text!r} must look like YYYY-MM-DD..YYYY-MM-DD"]) from None


def _month_of(day: dt.date) -> tuple[dt.date, dt.date]:
    last = calendar.monthrange(day.year, day.month)[1]
    return day.replace(day=1), day.replace(day=last)


def _unit_hash(*parts) -> float:
    h = hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(h, "big") / 2.0**64


def ingest_taxi_trace(records: Iterable[TripRecord], cfg: IngestionConfig, buyer_spec: BuyerSpec | None = None,
                      econ: EconomicParams | None = None, risk_bounds: RiskBounds | None = None,
                      limits: StructuralLimits | None = None) -> Scenario:
    problems = cfg.check()
    if problems:
        raise ValidationError(problems)
    buyer_spec = buyer_spec or BuyerSpec()
    if buyer_spec.buyers < 1:
        raise ValidationError(["buyers must be >= 1"])

    # single pass: per vehicle, per day -> (touches poi, miles, trips)
    daily: dict[str, dict[dt.date, list]] = defaultdict(dict)
    first_day = None
    for r in records:
        day = r.start_timestamp.date()
        first_day = day if first_day is None or day < first_day else first_day
        slot = daily[r.vehicle_id].setdefault(day, [False, 0.0, 0])
        slot[0] = slot[0] or r.touches(cfg.poi_area)
        slot[1] += r.trip_miles
        slot[2] += 1
    if first_day is None:
        raise IngestionError(["no trip records supplied"])
    lo, hi = cfg.window or _month_of(first_day)
    n_days = (hi - lo).days + 1

    stats = []
    for vid, days in daily.items():
        inside = {d: v for d, v in days.items() if lo <= d <= hi}
        present = sum(1 for v in inside.values() if v[0])
        if not present:
            continue
        miles = sum(v[1] for v in inside.values())
        trips = sum(v[2] for v in inside.values())
        stats.append((vid, present, trips, miles / trips))
    if not stats:
        raise IngestionError([f"no vehicle has a trip touching area {cfg.poi_area} within {lo}..{hi}"])

    # most active first: present days, then trip count, then id
    stats.sort(key=lambda s: (-s[1], -s[2], s[0]))
    kept = sorted(stats[: cfg.sellers], key=lambda s: s[0])

    c_lo, c_hi = cfg.cost_range
    by_miles = sorted(kept, key=lambda s: (s[3], s[0]))
    denom = max(1, len(by_miles) - 1)
    base = {s[0]: c_lo + (c_hi - c_lo) * i / denom for i, s in enumerate(by_miles)}

    rng = derive_stream(cfg.seed, "ingest")
    ranges = buyer_spec.ranges
    buyer_ids = [f"b{j + 1:02d}" for j in range(buyer_spec.buyers)]
    ranks = rng.permutation(buyer_spec.buyers) + 1
    buyers = tuple(
        BuyerProfile(bid, float(rng.uniform(*ranges.required_quality)), float(rng.uniform(*ranges.budget)),
                     int(ranks[j]), float(rng.uniform(*ranges.buyer_attendance)))
        for j, bid in enumerate(buyer_ids)
    )
    workload = TruncatedGaussianSpec(ranges.workload_mean, ranges.workload_std, ranges.workload_lo, ranges.workload_hi)
    amp = cfg.jitter * (c_hi - c_lo)
    sellers = []
    for vid, present, _, _ in kept:
        q = {bid: float(rng.uniform(*ranges.q_plus)) for bid in buyer_ids}
        cost = {bid: float(np.clip(base[vid] + amp * (2 * _unit_hash(cfg.seed, vid, bid) - 1), c_lo, c_hi))
                for bid in buyer_ids}
        sellers.append(SellerProfile(id=str(vid), attendance_prob=present / n_days, workload=workload,
                                     q_plus=q, base_cost=cost))
    return Scenario(
        sellers=tuple(sellers),
        buyers=buyers,
        econ=econ or EconomicParams(),
        risk_bounds=risk_bounds or RiskBounds(),
        limits=limits or StructuralLimits(),
    ).validate()


def synthetic_trace(vehicles: int = 100, start: dt.date = dt.date(2023, 1, 1), days: int = 31, seed: int = 0,
                    poi_area: int = 77, areas: int = 77) -> list[TripRecord]:
    """A seeded stand-in for a month of taxi trips.

    Each vehicle gets its own daily activity rate, PoI affinity and typical
    trip length, so attendance and cost ranks vary across the fleet.
    """
    rng = derive_stream(seed, "trace")
    out = []
    for v in range(vehicles):
        vid = f"taxi{v + 1:03d}"
        active = rng.uniform(0.2, 0.95)
        affinity = rng.uniform(0.05, 0.6)
        typical = rng.uniform(1.0, 12.0)
        for d in range(days):
            if rng.random() >= active:
                continue
            day = start + dt.timedelta(days=d)
            for _ in range(int(rng.integers(1, 6))):
                ts = dt.datetime.combine(day, dt.time()) + dt.timedelta(seconds=int(rng.integers(0, 86400)))
                pick = poi_area if rng.random() < affinity / 2 else int(rng.integers(1, areas + 1))
                drop = poi_area if rng.random() < affinity / 2 else int(rng.integers(1, areas + 1))
                miles = round(float(rng.gamma(2.0, typical / 2.0)), 2)
                out.append(TripRecord(vid, ts, pick, drop, miles))
    return out
