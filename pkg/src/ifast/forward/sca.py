"""Successive convex approximation on the relaxed 0-1 assignment.

Relaxed variables ``z[e]`` in [0, 1] live on entries ``e = (seller, buyer,
level)``.  Each buyer's forward quality is approximated as a sum of
independent terms ``z * Bernoulli(a) * Q`` and handled through its mean and
standard deviation:

    shortfall  P(quality < req)  <= eps1   ~   req - mu + k1 * sigma <= 0
    budget     P(payment > B)    <= eps2   ~   mu_P - B + k2 * sigma_P <= 0

with ``k = Phi^-1(1 - eps)``.  For ``eps < 1/2`` both left-hand sides are
convex in ``z``.  The integrality pressure ``eta * z * (1 - z)`` is concave
and is the term that gets linearised at every outer iterate, which gives a
convex majoriser; each subproblem is solved by projected gradient.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ..market import ContractSet
from ..risk import RiskReport
from .problem import ForwardProblem, SolveResult

K_CAP = 6.0


@dataclass
class RelaxedPoint:
    entries: list
    z: np.ndarray
    surrogates: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {e: float(v) for e, v in zip(self.entries, self.z)}


@dataclass
class SCAParams:
    max_outer: int = 50
    step_tol: float = 1e-3
    inner_tol: float = 1e-6
    max_inner: int = 300
    penalty_start: float = 10.0
    penalty_growth: float = 1.6
    penalty_max: float = 1e4
    integrality_start: float = 0.05
    integrality_growth: float = 1.3
    prox: float = 1.0


class _Model:
    """Index arrays describing the relaxation of one problem."""

    def __init__(self, problem: ForwardProblem):
        sc = problem.scenario
        self.problem = problem
        self.entries = problem.entries
        E = len(self.entries)
        self.sellers = [s.id for s in sc.sellers]
        self.buyers = [b.id for b in sc.buyers]
        scol = {s: i for i, s in enumerate(self.sellers)}
        bcol = {b: j for j, b in enumerate(self.buyers)}
        self.M, self.N = len(self.sellers), len(self.buyers)
        self.bi = np.zeros(E, dtype=np.int64)
        self.si = np.zeros(E, dtype=np.int64)
        self.pi = np.zeros(E, dtype=np.int64)
        pairs: dict = {}
        self.w = np.zeros(E)
        self.mu_q = np.zeros(E)
        self.var_q = np.zeros(E)
        self.mu_p = np.zeros(E)
        self.var_p = np.zeros(E)
        self.beta = np.zeros(E)
        for i, e in enumerate(self.entries):
            sid, bid, _ = e
            s, b = sc.seller(sid), sc.buyer(bid)
            a = s.attendance_prob
            m1, m2 = problem.moments[e]
            self.bi[i], self.si[i] = bcol[bid], scol[sid]
            self.pi[i] = pairs.setdefault((sid, bid), len(pairs))
            self.w[i] = problem.weight(e)
            self.mu_q[i] = a * m1
            self.var_q[i] = max(0.0, a * m2 - (a * m1) ** 2)
            p_pay = a * b.attendance_prob
            price = problem.prices[e]
            self.mu_p[i] = p_pay * price
            self.var_p[i] = p_pay * (1 - p_pay) * price ** 2
            self.beta[i] = b.attendance_prob
        self.booked = self.mu_q
        self.n_pairs = len(pairs)
        self.req = np.array([sc.buyer(b).required_quality for b in self.buyers])
        self.budget = np.array([sc.buyer(b).budget for b in self.buyers])
        self.capacity = np.array([sc.seller(s).capacity for s in self.sellers], dtype=float)
        self.s_max = float(problem.limits.max_contracts_per_seller)
        self.o_cap = (1.0 + problem.limits.max_buyer_overbooking) * self.req
        bounds = problem.bounds
        self.k1 = _k(bounds.eps_shortfall)
        self.k2 = _k(bounds.eps_budget)
        self.use_shortfall = bounds.eps_shortfall < 1.0
        self.use_budget = bounds.eps_budget < 1.0
        if self.s_max <= 1.0:
            # a seller sum <= 1 already caps every pair sum
            self.groups = (_Groups(self.si, self.M, self.s_max),)
        else:
            self.groups = (_Groups(self.pi, self.n_pairs, 1.0), _Groups(self.si, self.M, self.s_max))
        self.scale = max(1.0, float(self.w.max(initial=0.0)))

    def per_buyer(self, x):
        return np.bincount(self.bi, weights=x, minlength=self.N)

    def per_seller(self, x):
        return np.bincount(self.si, weights=x, minlength=self.M)

    def _sd_term(self, z, var_c, k, anchor):
        """Per-buyer ``k * sigma`` and its per-entry partials; linearised at ``anchor`` when k < 0."""
        at = z if (anchor is None or k >= 0) else anchor
        sd = np.sqrt(self.per_buyer(at * at * var_c) + 1e-12)
        dsd = at * var_c / sd[self.bi]
        if at is not z:
            sd = sd + self.per_buyer(dsd * (z - at))
        return k * sd, k * dsd

    def margins(self, z: np.ndarray, anchor: np.ndarray | None = None):
        """Normalised constraint margins (<= 0 feasible) with per-entry partials.

        Yields ``(margin, group_index, partial)``: the margin of a group
        depends on entry ``e`` only through ``partial[e]`` and only for the
        group ``group_index[e]``.
        """
        out = []
        if self.use_shortfall:
            t, dt = self._sd_term(z, self.var_q, self.k1, anchor)
            g = (self.req - self.per_buyer(z * self.mu_q) + t) / self.req
            out.append((g, self.bi, (-self.mu_q + dt) / self.req[self.bi]))
        if self.use_budget:
            t, dt = self._sd_term(z, self.var_p, self.k2, anchor)
            h = (self.per_buyer(z * self.mu_p) - self.budget + t) / self.budget
            out.append((h, self.bi, (self.mu_p + dt) / self.budget[self.bi]))
        o = (self.per_buyer(z * self.booked) - self.o_cap) / self.o_cap
        out.append((o, self.bi, self.booked / self.o_cap[self.bi]))
        # expected number of present contracted buyers must fit the seller's capacity
        c = (self.per_seller(z * self.beta) - self.capacity) / self.capacity
        out.append((c, self.si, self.beta / self.capacity[self.si]))
        return out

    def violation(self, z: np.ndarray) -> float:
        return float(sum(np.maximum(0.0, m).sum() for m, _, _ in self.margins(z)))

    def project(self, z: np.ndarray, iters: int = 50) -> np.ndarray:
        """Euclidean projection onto box ∩ {pair sums <= 1} ∩ {seller sums <= S_max} (Dykstra)."""
        x = np.clip(z, 0.0, 1.0)
        if self._inside(x):
            return x
        if len(self.groups) == 1:
            return self.groups[0].project(x)
        pairs, sellers = self.groups
        p = np.zeros_like(x)
        q = np.zeros_like(x)
        for _ in range(iters):
            y = pairs.project(x + p)
            p = x + p - y
            x_new = sellers.project(y + q)
            q = y + q - x_new
            done = np.max(np.abs(x_new - x)) < 1e-10
            x = x_new
            if done:
                break
        # Dykstra may stop a hair outside the pair family; rescale to land inside
        tot = pairs.sums(x)
        return x / np.maximum(1.0, tot / pairs.cap)[pairs.index]

    def _inside(self, x: np.ndarray) -> bool:
        return all(np.all(g.sums(x) <= g.cap + 1e-12) for g in self.groups)


def _k(eps: float) -> float:
    if eps >= 1.0:
        return -K_CAP
    return float(np.clip(norm.ppf(1.0 - eps), -K_CAP, K_CAP))


class _Groups:
    """Padded (groups x members) layout of one group family for vectorised projection."""

    def __init__(self, index: np.ndarray, n_groups: int, cap: float):
        self.index, self.n, self.cap = index, n_groups, cap
        order = np.argsort(index, kind="stable")
        counts = np.bincount(index, minlength=n_groups)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.rows = index[order]
        self.cols = np.arange(len(index)) - starts[self.rows]
        self.order = order
        self.width = int(counts.max(initial=0))

    def sums(self, x: np.ndarray) -> np.ndarray:
        return np.bincount(self.index, weights=x, minlength=self.n)

    def project(self, v: np.ndarray) -> np.ndarray:
        """Project each group onto {0 <= x <= 1, sum x <= cap}."""
        out = np.clip(v, 0.0, 1.0)
        bad = self.sums(out) > self.cap + 1e-15
        if not bad.any():
            return out
        pad = float(v.min()) - 4.0
        V = np.full((self.n, self.width), pad)
        V[self.rows, self.cols] = v[self.order]
        tau = _capped_tau(V[bad], self.cap)
        sel = bad[self.index]
        out[sel] = np.clip(v[sel] - tau[np.searchsorted(np.flatnonzero(bad), self.index[sel])], 0.0, 1.0)
        return out


def _capped_tau(V: np.ndarray, cap: float) -> np.ndarray:
    """Row-wise shift ``tau`` with ``sum clip(V - tau, 0, 1) = cap``.

    ``f(tau)`` is piecewise linear and nonincreasing with kinks at ``V`` and
    ``V - 1``; find the segment containing ``cap`` and interpolate.  Padding
    entries sit far left of every real kink and do not move the root.
    """
    kinks = np.sort(np.concatenate([V, V - 1.0], axis=1), axis=1)
    f = np.clip(V[:, None, :] - kinks[:, :, None], 0.0, 1.0).sum(axis=2)
    j = np.clip((f > cap).sum(axis=1), 1, kinks.shape[1] - 1)
    r = np.arange(len(V))
    t0, t1, f0, f1 = kinks[r, j - 1], kinks[r, j], f[r, j - 1], f[r, j]
    den = np.where(f0 > f1, f0 - f1, 1.0)
    return np.where(f0 > f1, t0 + (f0 - cap) * (t1 - t0) / den, t1)


def _capped_simplex(v: np.ndarray, cap: float) -> np.ndarray:
    """Exact projection of one vector onto {0 <= x <= 1, sum x = cap}."""
    v = np.asarray(v, dtype=float)
    return np.clip(v - _capped_tau(v[None, :], cap)[0], 0.0, 1.0)


def gaussian_surrogates(point: RelaxedPoint, problem: ForwardProblem, model: _Model | None = None) -> dict:
    """Per-buyer Gaussian approximations of the shortfall and budget risks.

    Returns means, variances, the surrogate probabilities
    ``Phi((req - mu) / sigma)`` and ``Phi((mu_P - B) / sigma_P)``, and their
    gradients in ``z`` (buyers x entries).  With zero variance the surrogate
    is the 0/1 step and its gradient is zero.
    """
    model = model or _Model(problem)
    z = np.asarray(point.z, dtype=float)
    E = len(z)
    out = {}
    for tag, mu_c, var_c, target, sign in (
        ("shortfall", model.mu_q, model.var_q, model.req, -1.0),
        ("budget", model.mu_p, model.var_p, model.budget, 1.0),
    ):
        mu = model.per_buyer(z * mu_c)
        var = model.per_buyer(z * z * var_c)
        sd = np.sqrt(var)
        pos = sd > 0
        safe_sd = np.where(pos, sd, 1.0)
        gap = sign * (mu - target)  # shortfall: req - mu, budget: mu - B
        arg = np.where(pos, gap / safe_sd, 0.0)
        val = np.where(pos, norm.cdf(arg), (gap > 0).astype(float))
        grad = np.zeros((model.N, E))
        if E:
            n = model.bi
            dgap = sign * mu_c
            dsd = z * var_c / safe_sd[n]
            darg = (dgap * sd[n] - gap[n] * dsd) / np.where(pos, var, 1.0)[n]
            grad[n, np.arange(E)] = np.where(pos[n], norm.pdf(arg)[n] * darg, 0.0)
        out[tag] = {
            "mean": dict(zip(model.buyers, mu.tolist())),
            "variance": dict(zip(model.buyers, var.tolist())),
            "value": dict(zip(model.buyers, val.tolist())),
            "gradient": grad,
        }
    point.surrogates = {k: {kk: vv for kk, vv in v.items() if kk != "gradient"} for k, v in out.items()}
    return out


def round_and_repair(point: RelaxedPoint, problem: ForwardProblem, threshold: float = 1e-9) -> ContractSet:
    """Greedy rounding in decreasing ``z`` with MC-checked acceptance.

    An entry is accepted when the structural limits hold, the objective
    increases, and no risk constraint that is satisfied before the addition
    is violated after it (a violated one may not get worse).  Candidates
    skipped in the first sweep are retried once in a second sweep, since
    later additions can make them admissible.
    """
    ranked = _rank(point, threshold)
    bounds = problem.bounds
    chosen: dict[str, list] = {}
    current = problem.evaluate(ContractSet())
    cur_obj = current.objective()

    def attempt(entry) -> bool:
        nonlocal current, cur_obj
        sid, bid, lvl = entry
        pairs = chosen.get(sid, [])
        if any(b == bid for b, _ in pairs) or len(pairs) >= problem.limits.max_contracts_per_seller:
            return False
        trial = dict(chosen)
        trial[sid] = pairs + [(bid, lvl)]
        contracts = problem.contracts_from(trial)
        if not problem.overbooking_ok(contracts):
            return False
        report = problem.evaluate(contracts)
        obj = report.objective()
        if obj <= cur_obj + 1e-12:
            return False
        if not _no_new_violation(current, report, bounds):
            return False
        chosen[sid] = trial[sid]
        current, cur_obj = report, obj
        return True

    skipped = [e for e in ranked if not attempt(e)]
    for e in skipped:
        attempt(e)
    return problem.contracts_from(chosen)


def _rank(point: RelaxedPoint, threshold: float):
    idx = [i for i, v in enumerate(point.z) if v > threshold]
    idx.sort(key=lambda i: (-float(point.z[i]), point.entries[i][0], point.entries[i][1], point.entries[i][2].order))
    return [point.entries[i] for i in idx]


def _no_new_violation(before: RiskReport, after: RiskReport, bounds) -> bool:
    for field_name, eps in (("shortfall", bounds.eps_shortfall), ("over_budget", bounds.eps_budget),
                            ("seller_loss", bounds.eps_seller_loss)):
        old, new = getattr(before, field_name), getattr(after, field_name)
        for k, v in new.items():
            prev = old.get(k, 0.0 if field_name != "shortfall" else 1.0)
            if v > eps and v > prev:
                return False
    return True


def solve_sca(problem: ForwardProblem, params: SCAParams | None = None, certify_seed: int | None = None,
              certify_samples: int | None = None, delta_feas: float = 0.05, recertify: bool = True) -> SolveResult:
    """Relax, iterate convex majorisers, round, then re-check on a fresh sample path.

    The certificate uses ``certify_seed`` (default ``problem.seed + 1``) so it
    never shares randomness with the path the solver optimised against.
    """
    params = params or SCAParams()
    t0 = time.perf_counter()
    model = _Model(problem)
    E = len(model.entries)
    trace: list[dict] = []
    z = np.zeros(E)
    rho = params.penalty_start
    eta = params.integrality_start * model.scale
    converged = E == 0
    outer = 0
    while E and outer < params.max_outer:
        outer += 1
        z_new = _solve_subproblem(model, z, rho, eta, params)
        step = float(np.linalg.norm(z_new - z))
        z = z_new
        obj = float(model.w @ z)
        trace.append({"iteration": outer, "objective": obj, "violation": model.violation(z),
                      "step_norm": step, "penalty": rho, "integrality": eta})
        if step < params.step_tol:
            converged = True
            break
        rho = min(params.penalty_max, rho * params.penalty_growth)
        eta *= params.integrality_growth
    if not converged:
        warnings.warn(f"SCA stopped after {params.max_outer} outer iterations without meeting step_tol",
                      RuntimeWarning, stacklevel=2)

    # z dominates the order; the tiny weight term lets rounding fall back on
    # capacity-free expected quality for entries the relaxation left at zero
    nudged = z + 1e-6 * model.w / model.scale
    contracts = round_and_repair(RelaxedPoint(model.entries, nudged), problem)
    report = problem.evaluate(contracts)
    feasible = problem.is_feasible(contracts, report)
    result = SolveResult(contracts, report.objective(), feasible, report, trace, 0.0,
                         solver="sca", converged=converged)
    if not trace:
        result.solver_trace.append({"iteration": 1, "objective": 0.0, "violation": 0.0, "step_norm": 0.0,
                                    "penalty": rho, "integrality": eta})
    if recertify:
        seed = problem.seed + 1 if certify_seed is None else certify_seed
        certify(result, problem, seed, certify_samples or problem.mc_samples, delta_feas)
    result.wall_time = time.perf_counter() - t0
    return result


def certify(result: SolveResult, problem: ForwardProblem, seed: int, samples: int, delta_feas: float = 0.05) -> None:
    """Re-check a solution's risks on a fresh sample path (tolerance ``delta_feas``)."""
    from ..risk import estimate_risks_mc

    cert = estimate_risks_mc(problem.scenario, result.contracts, samples, seed)
    result.certificate = cert
    result.certified = result.feasible and cert.within(problem.bounds, delta_feas)


def _solve_subproblem(model: _Model, z_k: np.ndarray, rho: float, eta: float, params: SCAParams) -> np.ndarray:
    """Accelerated projected gradient on the convex majoriser at ``z_k``."""
    lin = -model.w / model.scale + eta / model.scale * (1.0 - 2.0 * z_k)
    tau = params.prox

    def value_grad(z):
        d = z - z_k
        f = float(lin @ z) + 0.5 * tau * float(d @ d)
        g = lin + tau * d
        for m, idx, partial in model.margins(z, anchor=z_k):
            pos = np.maximum(0.0, m)
            f += 0.5 * rho * float(pos @ pos)
            g = g + rho * pos[idx] * partial
        return f, g

    z = z_k.copy()
    y, t = z, 1.0
    fy, gy = value_grad(y)
    step = 1.0 / (tau + rho)
    for _ in range(params.max_inner):
        while True:
            cand = model.project(y - step * gy)
            fc, _ = value_grad(cand)
            d = cand - y
            if fc <= fy + gy @ d + 0.5 / step * float(d @ d) + 1e-15 or step < 1e-12:
                break
            step *= 0.5
        moved = float(np.linalg.norm(cand - z))
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = cand + ((t - 1.0) / t_next) * (cand - z)
        z, t = cand, t_next
        fy, gy = value_grad(y)
        if moved < params.inner_tol:
            break
    return z
