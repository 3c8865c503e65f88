"""Ground-truth engines.

* :func:`opt_online` -- Bellman recursion for the optimum online value over
  (round, set of available users).
* :func:`exact_report` -- exact forward propagation of the two-proposal
  algorithm's law over availability bitmasks, giving per-pair allocation,
  availability and joint-availability probabilities and the exact normalizers.
* :func:`opt_offline_estimate` -- Monte-Carlo estimate of the offline optimum.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from capalloc.allocator.rules import KAPPA, Tables, build_tables
from capalloc.instance import BernoulliInstance, as_general
from capalloc.lp import LpSolution, check_feasibility
from capalloc.pivotal import MarginalVector, subset_distribution

OPT_MAX_N = 12
DEFAULT_BUDGET = 20_000_000
EXACT_MAX_N = 6
EXACT_MAX_T = 6
OFFLINE_ENUM_MAX_N = 8


class OracleBudgetError(RuntimeError):
    """The requested oracle would exceed its work budget."""

    def __init__(self, message: str, required: Optional[int] = None,
                 budget: Optional[int] = None):
        super().__init__(message)
        self.required = required
        self.budget = budget


def _bits(mask: int, n: int) -> list:
    return [i for i in range(n) if mask >> i & 1]


def _coins(users, probs) -> list:
    """Law of independent coins: ``[(bitmask of heads, probability)]``."""
    out = [(0, 1.0)]
    for i in users:
        p = float(probs[i])
        if p >= 1.0:
            out = [(b | 1 << i, w) for b, w in out]
        elif p > 0.0:
            out = [(b | 1 << i, w * p) for b, w in out] + [(b, w * (1.0 - p)) for b, w in out]
    return out


# ---------------------------------------------------------------------------
# optimum online
# ---------------------------------------------------------------------------

@dataclass
class OptOnlineValue:
    value: float
    table: Optional[np.ndarray] = None   # (T + 1, 2**n), entry [t, J]

    def __float__(self) -> float:
        return self.value


def opt_online_work(inst) -> int:
    """Number of (state, allocation subset, success pattern) evaluations."""
    g = as_general(inst)
    n = g.n
    per_round = 0
    for reals in g.rounds:
        for r in reals:
            if r.p > 0.0:
                per_round += sum(math.comb(n, s) * 2 ** s for s in range(min(r.c, n) + 1))
    return (2 ** n) * per_round


def opt_online(inst, budget: int = DEFAULT_BUDGET, keep_table: bool = False) -> OptOnlineValue:
    """Optimum online expected welfare by backward induction."""
    g = as_general(inst)
    n, T = g.n, g.T
    if n > OPT_MAX_N:
        raise OracleBudgetError(f"opt_online supports n <= {OPT_MAX_N}, got n={n}")
    work = opt_online_work(g)
    if work > budget:
        raise OracleBudgetError(f"opt_online needs a budget of {work} evaluations "
                                f"(configured {budget})", required=work, budget=budget)
    size = 1 << n
    V = np.zeros((T + 1, size))
    for t in range(T - 1, -1, -1):
        nxt = V[t + 1]
        for mask in range(size):
            total = 0.0
            for r in g.rounds[t]:
                if r.p <= 0.0:
                    continue
                best = nxt[mask]
                users = [i for i in _bits(mask, n) if r.values[i] * r.q[i] > 0.0]
                for s in range(1, min(r.c, len(users)) + 1):
                    for chosen in combinations(users, s):
                        val = 0.0
                        for ok, w in _coins(chosen, r.q):
                            gain = sum(r.values[i] for i in _bits(ok, n))
                            val += w * (gain + nxt[mask & ~ok])
                        if val > best:
                            best = val
                total += r.p * best
            V[t, mask] = total
    return OptOnlineValue(float(V[0, size - 1]), V if keep_table else None)


# ---------------------------------------------------------------------------
# exact forward engine
# ---------------------------------------------------------------------------

@dataclass
class ExactForward:
    """Raw per-realization output of :func:`exact_forward` (arrays indexed ``[t, j, i]``)."""

    tables: Tables
    p1: np.ndarray          # Pr[realization j and (i, t) allocated by the first proposal]
    p2: np.ndarray          # same for the second proposal
    rho: np.ndarray         # normalizer conditioned on realization j
    beta: np.ndarray
    beta_raw: np.ndarray    # uncapped numerator / rho for late pairs, nan elsewhere
    p_free: np.ndarray      # (T + 1, n) availability at the start of each round
    p_joint: np.ndarray     # (T + 1, n, n) joint availability
    max_alloc: np.ndarray   # (T, m) largest allocation count on any positive-probability path
    welfare: float


def exact_forward(tb: Tables) -> ExactForward:
    """Propagate the exact law of the algorithm, computing normalizers on the way."""
    n, T, m = tb.n, tb.T, tb.m
    if n > EXACT_MAX_N or T > EXACT_MAX_T:
        raise OracleBudgetError(f"exact engine supports n <= {EXACT_MAX_N} and "
                                f"T <= {EXACT_MAX_T}; got n={n}, T={T}")
    k = tb.kappa
    p1 = np.zeros((T, m, n))
    p2 = np.zeros((T, m, n))
    rho = np.zeros((T, m, n))
    beta = np.zeros((T, m, n))
    beta_raw = np.full((T, m, n), np.nan)
    p_free = np.zeros((T + 1, n))
    p_joint = np.zeros((T + 1, n, n))
    max_alloc = np.zeros((T, m), dtype=np.int64)
    welfare = 0.0
    dist = {(1 << n) - 1: 1.0}

    for t in range(T):
        _record_availability(dist, n, p_free[t], p_joint[t])
        num = np.maximum((0.5 + k) * tb.y[t] - (0.5 - k), 0.0)
        late = tb.late[t].astype(bool)
        new: dict = defaultdict(float)
        for j in range(int(tb.n_real[t])):
            pj = float(tb.probs[t, j])
            if pj <= 0.0:
                continue
            c = int(tb.cap[t, j])
            if c == 0:
                for mask, w in dist.items():
                    new[mask] += w * pj
                continue
            marg = tb.marg[t, j]
            fp_law = subset_distribution(MarginalVector(tuple(marg), c))

            # first proposal and alpha coins, conditioned on realization j
            stage: dict = defaultdict(float)
            for mask, w in dist.items():
                for S, ps in fp_law.items():
                    elig = [i for i in sorted(S) if mask >> i & 1]
                    for a1, pc in _coins(elig, tb.alpha[t]):
                        stage[(mask, a1)] += w * ps * pc

            r = np.zeros(n)
            for (mask, a1), w in stage.items():
                f = 1.0 - bin(a1).count("1") / c
                for i in range(n):
                    if mask >> i & 1 and not a1 >> i & 1:
                        r[i] += w * f
            rho[t, j] = r
            for i in range(n):
                if not late[i]:
                    continue
                if r[i] > 0.0:
                    beta_raw[t, j, i] = num[i] / r[i]
                    beta[t, j, i] = min(1.0, num[i] / r[i])
                else:
                    beta[t, j, i] = 1.0 if num[i] > 0.0 else 0.0

            sp_laws: dict = {}
            for (mask, a1), w in stage.items():
                A = bin(a1).count("1")
                ww = w * pj
                for i in _bits(a1, n):
                    p1[t, j, i] += ww
                if A not in sp_laws:
                    scaled = tuple((1.0 - A / c) * v for v in marg)
                    sp_laws[A] = subset_distribution(MarginalVector(scaled, c - A))
                for S2, ps2 in sp_laws[A].items():
                    cand = [i for i in sorted(S2)
                            if late[i] and mask >> i & 1 and not a1 >> i & 1]
                    for a2, pb in _coins(cand, beta[t, j]):
                        w2 = ww * ps2 * pb
                        if w2 <= 0.0:
                            continue
                        alloc = a1 | a2
                        users = _bits(alloc, n)
                        if len(users) > max_alloc[t, j]:
                            max_alloc[t, j] = len(users)
                        for i in _bits(a2, n):
                            p2[t, j, i] += w2
                        for ok, pq in _coins(users, tb.q[t, j]):
                            w3 = w2 * pq
                            new[mask & ~ok] += w3
                            if ok:
                                welfare += w3 * sum(tb.val[t, j, i] for i in _bits(ok, n))
        dist = dict(new)
    _record_availability(dist, n, p_free[T], p_joint[T])
    return ExactForward(tb, p1, p2, rho, beta, beta_raw, p_free, p_joint, max_alloc, float(welfare))


def _record_availability(dist, n, free, joint):
    for mask, w in dist.items():
        idx = _bits(mask, n)
        if idx:
            free[idx] += w
            joint[np.ix_(idx, idx)] += w


@dataclass
class ExactReport:
    """Exact law of the two-proposal algorithm on a tiny instance.

    Pair-level arrays are indexed ``[t, i]`` (realizations summed); the
    availability arrays have ``T + 1`` rows, row ``t`` describing the start
    of round ``t`` and the last row the end of the horizon.
    """

    kappa: float
    forward: ExactForward
    x: np.ndarray            # (T, n) LP mass summed over realizations
    pr_first: np.ndarray     # (T, n)
    pr_second: np.ndarray    # (T, n)
    pr_free: np.ndarray      # (T + 1, n)
    pr_joint: np.ndarray     # (T + 1, n, n)
    y: np.ndarray            # (T, n)
    late: np.ndarray         # (T, n) bool
    rho: np.ndarray          # (T, n) normalizer of the arriving realization (Bernoulli) or max over j
    welfare: float
    lp_objective: float

    @property
    def pr_alloc(self) -> np.ndarray:
        return self.pr_first + self.pr_second

    @property
    def target(self) -> np.ndarray:
        return (0.5 + self.kappa) * self.x

    @property
    def marginal_error(self) -> float:
        return float(np.abs(self.pr_alloc - self.target).max(initial=0.0))

    @property
    def capacity_ok(self) -> bool:
        tb = self.forward.tables
        return bool((self.forward.max_alloc <= tb.cap).all())

    @property
    def max_beta_ratio(self) -> float:
        raw = self.forward.beta_raw
        mask = ~np.isnan(raw) & (self.forward.tables.marg > 0.0)
        return float(raw[mask].max(initial=0.0))

    def late_rho_values(self) -> np.ndarray:
        """Normalizers of late pairs with positive LP mass."""
        tb = self.forward.tables
        mask = tb.late[:, None, :].astype(bool) & (tb.marg > 0.0) & (tb.probs[:, :, None] > 0.0)
        return self.forward.rho[mask]

    def rows(self) -> list:
        out = []
        T, n = self.x.shape
        for t in range(T):
            for i in range(n):
                out.append({"t": t, "i": i, "x": self.x[t, i], "y": self.y[t, i],
                            "late": int(self.late[t, i]), "pr_first": self.pr_first[t, i],
                            "pr_second": self.pr_second[t, i], "pr_alloc": self.pr_alloc[t, i],
                            "target": self.target[t, i], "pr_free": self.pr_free[t, i],
                            "rho": self.rho[t, i]})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.rows()
        w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()) if rows else ["t", "i"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "welfare": self.welfare, "lp_objective": self.lp_objective,
                "x": self.x.tolist(), "pr_first": self.pr_first.tolist(),
                "pr_second": self.pr_second.tolist(), "pr_free": self.pr_free.tolist(),
                "pr_joint": self.pr_joint.tolist(), "rho": self.rho.tolist(),
                "capacity_ok": self.capacity_ok}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def exact_report(inst, sol: LpSolution, kappa: float = KAPPA, check: bool = True) -> ExactReport:
    """Exact probabilities of the exact-normalizer algorithm run on ``sol``."""
    if check:
        bad = check_feasibility(sol, sol.model, 1e-7)
        if bad:
            raise ValueError(f"LP solution is infeasible: {bad[:3]}")
    tb = build_tables(inst, sol, kappa)
    fw = exact_forward(tb)
    x = tb.x.sum(axis=1)
    if isinstance(inst, BernoulliInstance):
        rho = fw.rho[:, 0, :].copy()
        for t, r in enumerate(inst.rounds):
            if r.p <= 0.0:
                rho[t] = 0.0
    else:
        rho = fw.rho.max(axis=1)
    return ExactReport(kappa, fw, x, fw.p1.sum(axis=1), fw.p2.sum(axis=1), fw.p_free,
                       fw.p_joint, tb.y.copy(), tb.late.astype(bool), rho, float(fw.welfare),
                       float(sol.objective))


# ---------------------------------------------------------------------------
# offline optimum
# ---------------------------------------------------------------------------

@dataclass
class OfflineEstimate:
    mean: float
    ci_half_width: float
    trials: int
    method: str

    def __float__(self) -> float:
        return self.mean


def _offline_enum(W: np.ndarray, caps) -> float:
    """Exact best assignment by DP over (round, used users)."""
    T, n = W.shape
    best = {0: 0.0}
    for t in range(T):
        nxt = dict(best)
        pos = [i for i in range(n) if W[t, i] > 0.0]
        c = int(caps[t])
        if c and pos:
            for used, val in best.items():
                free = [i for i in pos if not used >> i & 1]
                for s in range(1, min(c, len(free)) + 1):
                    for chosen in combinations(free, s):
                        key = used
                        gain = val
                        for i in chosen:
                            key |= 1 << i
                            gain += W[t, i]
                        if gain > nxt.get(key, -1.0):
                            nxt[key] = gain
        best = nxt
    return max(best.values())


def _offline_assignment(W: np.ndarray, caps) -> float:
    T, n = W.shape
    slots = [t for t in range(T) for _ in range(min(int(caps[t]), n))]
    if not slots:
        return 0.0
    M = W[slots].T                     # users x slots
    r, c = linear_sum_assignment(M, maximize=True)
    return float(M[r, c].sum())


def opt_offline_estimate(inst, trials: int, rng=None) -> OfflineEstimate:
    """Expected welfare of a prophet who sees all arrivals and success outcomes."""
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    g = as_general(inst)
    n, T = g.n, g.T
    method = "enumeration" if n <= OFFLINE_ENUM_MAX_N else "assignment"
    solver = _offline_enum if method == "enumeration" else _offline_assignment
    out = np.zeros(trials)
    for k in range(trials):
        W = np.zeros((T, n))
        caps = np.zeros(T, dtype=np.int64)
        for t, reals in enumerate(g.rounds):
            probs = np.array([r.p for r in reals])
            j = int(rng.choice(len(reals), p=probs / probs.sum()))
            r = reals[j]
            caps[t] = r.c
            ok = rng.random(n) < np.asarray(r.q)
            W[t] = np.where(ok, r.values, 0.0)
        out[k] = solver(W, caps)
    ci = float(1.96 * out.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("inf")
    return OfflineEstimate(float(out.mean()), ci, trials, method)
