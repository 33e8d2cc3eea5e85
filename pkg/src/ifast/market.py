"""Market primitives: participants, stochastic kernels, prices, utilities.

Everything here is immutable and cheap to share between workers.  Random
draws go through :func:`derive_stream`, which maps ``(seed, tag, index)`` to
an independent ``numpy.random.Generator`` so that every consumer of
randomness (campaign realizations, Monte Carlo risk paths, MCRandom
shuffles) owns its own reproducible stream.
"""
from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy import stats


class ValidationError(ValueError):
    """Scenario, contract or configuration data violates a declared invariant."""

    def __init__(self, problems: Sequence[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class Level(str, enum.Enum):
    PLUS = "Plus"
    MINUS = "Minus"

    @classmethod
    def parse(cls, value: "Level | str") -> "Level":
        if isinstance(value, Level):
            return value
        for lvl in cls:
            if value.lower() == lvl.value.lower():
                return lvl
        raise ValidationError(f"unknown quality level {value!r}")

    @property
    def order(self) -> int:
        """Tie-break rank: declaration order, Plus before Minus."""
        return 0 if self is Level.PLUS else 1


def derive_stream(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, tag, index)``.

    The tag is hashed with crc32 so the mapping is stable across processes
    and Python versions (``hash()`` is salted).
    """
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(tag.encode()), int(index)])
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class TruncatedGaussianSpec:
    mean: float = 2.5
    std_dev: float = 0.5
    lo: float = 1.5
    hi: float = 3.5

    def __post_init__(self):
        if not self.std_dev > 0:
            raise ValidationError(f"std_dev must be > 0, got {self.std_dev}")
        if not self.lo < self.hi:
            raise ValidationError(f"truncation interval must satisfy lo < hi, got [{self.lo}, {self.hi}]")

    @cached_property
    def _dist(self):
        a = (self.lo - self.mean) / self.std_dev
        b = (self.hi - self.mean) / self.std_dev
        return stats.truncnorm(a, b, loc=self.mean, scale=self.std_dev)

    @property
    def pinned(self) -> bool:
        """Support so narrow that the law is effectively a point mass."""
        return self.hi - self.lo < 1e-6 * self.std_dev

    def ppf(self, u):
        if self.pinned:
            return self.lo + np.asarray(u) * (self.hi - self.lo)
        # clip guards against the ppf landing a few ulps outside the support
        return np.clip(self._dist.ppf(u), self.lo, self.hi)

    def cdf(self, x):
        return self._dist.cdf(x)

    def sf(self, x):
        return self._dist.sf(x)

    @cached_property
    def _moments(self) -> tuple[float, float]:
        if self.pinned:
            return (self.lo + self.hi) / 2, (self.hi - self.lo) ** 2 / 12
        m, v = self._dist.stats(moments="mv")
        return float(m), float(v)

    def expected(self) -> float:
        return self._moments[0]

    def variance(self) -> float:
        return self._moments[1]

    def sample(self, rng: np.random.Generator, size=None):
        """Inverse-CDF draw; one uniform per sample."""
        return self.ppf(rng.random(size))

    def quantile_nodes(self, grid_points: int) -> np.ndarray:
        """Equal-probability nodes at the midpoints of ``grid_points`` quantile bins."""
        u = (np.arange(grid_points) + 0.5) / grid_points
        return self.ppf(u)


@dataclass(frozen=True)
class SellerProfile:
    id: str
    attendance_prob: float
    workload: TruncatedGaussianSpec
    q_plus: Mapping[str, float]
    base_cost: Mapping[str, float]
    capacity: int = 1

    def check(self) -> list[str]:
        out = []
        if not 0.0 <= self.attendance_prob <= 1.0:
            out.append(f"seller {self.id}: attendance_prob {self.attendance_prob} outside [0,1]")
        if self.capacity < 1:
            out.append(f"seller {self.id}: capacity must be >= 1")
        if set(self.q_plus) != set(self.base_cost):
            out.append(f"seller {self.id}: q_plus and base_cost keyed by different buyers")
        out += [f"seller {self.id}: q_plus[{b}] must be > 0" for b, q in self.q_plus.items() if not q > 0]
        out += [f"seller {self.id}: base_cost[{b}] must be > 0" for b, c in self.base_cost.items() if not c > 0]
        return out


@dataclass(frozen=True)
class BuyerProfile:
    id: str
    required_quality: float
    budget: float
    arrival_rank: int
    attendance_prob: float = 1.0

    def check(self) -> list[str]:
        out = []
        if not self.required_quality > 0:
            out.append(f"buyer {self.id}: required_quality must be > 0")
        if not self.budget > 0:
            out.append(f"buyer {self.id}: budget must be > 0")
        if not 0.0 <= self.attendance_prob <= 1.0:
            out.append(f"buyer {self.id}: attendance_prob {self.attendance_prob} outside [0,1]")
        return out


@dataclass(frozen=True)
class EconomicParams:
    xi: float = 0.4
    kappa: float = 0.2
    forward_margin: float = 0.25
    spot_margin: float = 0.5
    default_penalty: float = 0.0

    def check(self) -> list[str]:
        out = [f"econ.{k} must be >= 0" for k, v in vars(self).items() if v < 0]
        if self.spot_margin < self.forward_margin:
            out.append("econ.spot_margin must be >= econ.forward_margin")
        return out


@dataclass(frozen=True)
class RiskBounds:
    eps_shortfall: float = 0.35
    eps_budget: float = 0.35
    eps_seller_loss: float = 0.35

    def check(self) -> list[str]:
        return [f"risk_bounds.{k} = {v} outside [0,1]" for k, v in vars(self).items() if not 0.0 <= v <= 1.0]


@dataclass(frozen=True)
class StructuralLimits:
    max_contracts_per_seller: int = 3
    max_buyer_overbooking: float = 1.0

    def check(self) -> list[str]:
        out = []
        if self.max_contracts_per_seller < 1:
            out.append("limits.max_contracts_per_seller must be >= 1")
        if self.max_buyer_overbooking < 0:
            out.append("limits.max_buyer_overbooking must be >= 0")
        return out


@dataclass(frozen=True)
class Scenario:
    sellers: tuple[SellerProfile, ...]
    buyers: tuple[BuyerProfile, ...]
    econ: EconomicParams = field(default_factory=EconomicParams)
    risk_bounds: RiskBounds = field(default_factory=RiskBounds)
    limits: StructuralLimits = field(default_factory=StructuralLimits)

    def __post_init__(self):
        object.__setattr__(self, "sellers", tuple(self.sellers))
        object.__setattr__(self, "buyers", tuple(self.buyers))

    def validate(self, allow_empty_buyers: bool = False) -> "Scenario":
        problems: list[str] = []
        if not self.sellers:
            problems.append("scenario has no sellers")
        if not self.buyers and not allow_empty_buyers:
            problems.append("scenario has no buyers")
        for kind, group in (("seller", self.sellers), ("buyer", self.buyers)):
            ids = [p.id for p in group]
            if len(set(ids)) != len(ids):
                problems.append(f"duplicate {kind} ids")
        ranks = [b.arrival_rank for b in self.buyers]
        if len(set(ranks)) != len(ranks):
            problems.append("buyer arrival_rank values must be unique")
        buyer_ids = {b.id for b in self.buyers}
        for s in self.sellers:
            problems += s.check()
            missing = buyer_ids - set(s.q_plus)
            if missing:
                problems.append(f"seller {s.id}: no q_plus/base_cost for buyers {sorted(missing)}")
        for b in self.buyers:
            problems += b.check()
        problems += self.econ.check() + self.risk_bounds.check() + self.limits.check()
        if problems:
            raise ValidationError(problems)
        return self

    @cached_property
    def seller_index(self) -> dict[str, SellerProfile]:
        return {s.id: s for s in self.sellers}

    @cached_property
    def buyer_index(self) -> dict[str, BuyerProfile]:
        return {b.id: b for b in self.buyers}

    def seller(self, sid: str) -> SellerProfile:
        try:
            return self.seller_index[sid]
        except KeyError:
            raise ValidationError(f"unknown seller id {sid!r}") from None

    def buyer(self, bid: str) -> BuyerProfile:
        try:
            return self.buyer_index[bid]
        except KeyError:
            raise ValidationError(f"unknown buyer id {bid!r}") from None

    def buyers_by_rank(self) -> list[BuyerProfile]:
        return sorted(self.buyers, key=lambda b: b.arrival_rank)


@dataclass(frozen=True, order=True)
class ForwardContract:
    seller_id: str
    buyer_id: str
    level: Level
    price: float
    penalty: float = 0.0

    @property
    def sort_key(self) -> tuple[str, str, int]:
        return (self.seller_id, self.buyer_id, self.level.order)


class ContractSet(tuple):
    """Tuple of :class:`ForwardContract` kept sorted by (seller, buyer)."""

    def __new__(cls, contracts=()):
        items = sorted(contracts, key=lambda c: c.sort_key)
        return super().__new__(cls, items)

    def check(self, scenario: Scenario | None = None) -> list[str]:
        out = []
        pairs = [(c.seller_id, c.buyer_id) for c in self]
        if len(set(pairs)) != len(pairs):
            out.append("duplicate (seller, buyer) pair in contract set")
        for c in self:
            if not c.price > 0:
                out.append(f"contract {c.seller_id}->{c.buyer_id}: price must be > 0")
            if c.penalty < 0:
                out.append(f"contract {c.seller_id}->{c.buyer_id}: penalty must be >= 0")
            if scenario is not None:
                if c.seller_id not in scenario.seller_index:
                    out.append(f"contract references unknown seller {c.seller_id!r}")
                if c.buyer_id not in scenario.buyer_index:
                    out.append(f"contract references unknown buyer {c.buyer_id!r}")
        return out

    def validate(self, scenario: Scenario | None = None) -> "ContractSet":
        problems = self.check(scenario)
        if problems:
            raise ValidationError(problems)
        return self

    def by_seller(self) -> dict[str, list[ForwardContract]]:
        out: dict[str, list[ForwardContract]] = {}
        for c in self:
            out.setdefault(c.seller_id, []).append(c)
        return out

    def order_key(self) -> tuple:
        """Lexicographic identity used to break objective ties."""
        return tuple(c.sort_key for c in self)

    def keys(self) -> list[tuple[str, str, str]]:
        return [(c.seller_id, c.buyer_id, c.level.value) for c in self]


@dataclass(frozen=True)
class Realization:
    transaction_index: int
    seller_attendance: Mapping[str, bool]
    buyer_attendance: Mapping[str, bool]
    workloads: Mapping[str, float]

    def digest(self) -> str:
        """Short content hash used to prove that methods saw the same draw."""
        parts = [str(self.transaction_index)]
        parts += [f"{k}:{int(v)}" for k, v in sorted(self.seller_attendance.items())]
        parts += [f"{k}:{int(v)}" for k, v in sorted(self.buyer_attendance.items())]
        parts += [f"{k}:{v!r}" for k, v in sorted(self.workloads.items())]
        return f"{zlib.crc32('|'.join(parts).encode()):08x}"


def sample_realization(scenario: Scenario, stream: np.random.Generator, transaction_index: int = 0) -> Realization:
    """One transaction's randomness.

    Draw order is fixed (seller attendance, buyer attendance, workloads, each
    in scenario order) so equal stream states give equal realizations.
    """
    m = len(scenario.sellers)
    u_att = stream.random(m)
    u_buy = stream.random(len(scenario.buyers))
    u_work = stream.random(m)
    seller_att = {s.id: bool(u < s.attendance_prob) for s, u in zip(scenario.sellers, u_att)}
    buyer_att = {b.id: bool(u < b.attendance_prob) for b, u in zip(scenario.buyers, u_buy)}
    workloads = {s.id: float(s.workload.ppf(u)) for s, u in zip(scenario.sellers, u_work)}
    return Realization(transaction_index, seller_att, buyer_att, workloads)


def realized_quality(level: Level, q_plus: float, xi: float, workload: float) -> float:
    if level is Level.PLUS:
        return q_plus
    return max(0.0, q_plus - xi * workload)


def service_cost(level: Level, base_cost: float, kappa: float, workload: float) -> float:
    if level is Level.PLUS:
        return base_cost + kappa * workload
    return base_cost


def expected_cost(level: Level, base_cost: float, kappa: float, expected_workload: float) -> float:
    return service_cost(level, base_cost, kappa, expected_workload)


def contract_price(level: Level, base_cost: float, kappa: float, expected_workload: float, margin: float) -> float:
    """Fixed price giving expected per-service profit ``margin * expected_cost``."""
    return (1.0 + margin) * expected_cost(level, base_cost, kappa, expected_workload)


def expected_realized_quality(level: Level, q_plus: float, xi: float, workload: TruncatedGaussianSpec) -> float:
    """E[realized_quality] under the workload law.

    The Minus level is E[max(0, q - xi*l)]; when the clamp can bind the
    expectation is taken by quadrature.
    """
    if level is Level.PLUS:
        return q_plus
    if xi == 0:
        return q_plus
    if q_plus - xi * workload.hi >= 0:
        return q_plus - xi * workload.expected()
    from scipy import integrate

    kink = min(q_plus / xi, workload.hi)
    if kink <= workload.lo:
        return 0.0
    val, _ = integrate.quad(lambda x: (q_plus - xi * x) * workload._dist.pdf(x), workload.lo, kink)
    return float(val)


def second_moment_quality(level: Level, q_plus: float, xi: float, workload: TruncatedGaussianSpec) -> float:
    if level is Level.PLUS or xi == 0:
        return q_plus * q_plus
    if q_plus - xi * workload.hi >= 0:
        m = q_plus - xi * workload.expected()
        return m * m + xi * xi * workload.variance()
    from scipy import integrate

    kink = min(q_plus / xi, workload.hi)
    if kink <= workload.lo:
        return 0.0
    val, _ = integrate.quad(lambda x: (q_plus - xi * x) ** 2 * workload._dist.pdf(x), workload.lo, kink)
    return float(val)


def seller_overbooking_rate(num_contracts: int, capacity: int) -> float:
    return max(0, num_contracts - capacity) / capacity


def buyer_overbooking_rate(booked_expected_quality: float, required_quality: float) -> float:
    return max(0.0, booked_expected_quality - required_quality) / required_quality


def booked_expected_quality(scenario: Scenario, contracts: Sequence[ForwardContract], buyer_id: str) -> float:
    total = 0.0
    for c in contracts:
        if c.buyer_id != buyer_id:
            continue
        s = scenario.seller(c.seller_id)
        eq = expected_realized_quality(c.level, s.q_plus[buyer_id], scenario.econ.xi, s.workload)
        total += s.attendance_prob * eq
    return total


def buyer_utility(received_qualities: Sequence[float]) -> float:
    return math.fsum(received_qualities)


def seller_utility(payments: Sequence[float], costs: Sequence[float], penalties_paid: Sequence[float]) -> float:
    return math.fsum(payments) - math.fsum(costs) - math.fsum(penalties_paid)
