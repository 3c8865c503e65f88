"""Runnable checks of the analysis: constants, the capacity-dependent
constant table, correlation bounds, approximation-ratio reports and the
tiny-instance suite used by the acceptance tests."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from capalloc.allocator.rules import KAPPA, DerivedConstants
from capalloc.instance import RandomParams, gen_random

# Published constants per minimum capacity, as (value, printed decimals).
TABLE_ONE = {1: (0.0115, 4), 2: (0.0126, 4), 3: (0.0131, 4), 4: (0.0133, 4), 5: (0.0134, 4),
             6: (0.0135, 4), 7: (0.01362, 5), 8: (0.01367, 5), 9: (0.01371, 5)}

KAPPA_TOL = 1e-7


def kappa_slack(kappa: float, min_c: int) -> float:
    """Left side minus right side of the capacity-dependent inequality on kappa."""
    d = DerivedConstants(kappa)
    lhs = d.tau - ((1.0 - d.tau) / min_c + d.delta * (0.5 + kappa))
    return lhs - 2.0 * kappa / (0.5 - kappa)


def check_kappa_inequality(kappa: float, min_c: int) -> tuple:
    """``(holds, slack)`` for the given constant and minimum capacity."""
    if not 0.0 < kappa < 0.5:
        raise ValueError("kappa must lie in (0, 0.5)")
    if min_c < 1:
        raise ValueError("min_c must be at least 1")
    s = kappa_slack(kappa, min_c)
    return s >= 0.0, s


def solve_kappa(min_c: int, tol: float = KAPPA_TOL) -> float:
    """Largest kappa with non-negative slack, by bisection."""
    if min_c < 1:
        raise ValueError("min_c must be at least 1")
    lo, hi = 1e-9, 0.1
    assert kappa_slack(lo, min_c) > 0.0 > kappa_slack(hi, min_c)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if kappa_slack(mid, min_c) >= 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def kappa_table(max_c: int = 9) -> list:
    """Rows ``(min_c, kappa)`` for ``min_c = 1 .. max_c``."""
    return [(c, solve_kappa(c)) for c in range(1, max_c + 1)]


def matches_printed(value: float, printed: float, decimals: int) -> bool:
    """True when ``value`` is within five units of the last printed place and
    truncates or rounds to the printed entry."""
    scale = 10 ** decimals
    close = abs(value - printed) <= 5.0 / scale
    as_printed = round(printed * scale)
    return close and as_printed in (math.floor(value * scale), round(value * scale))


# ---------------------------------------------------------------------------
# correlation audit
# ---------------------------------------------------------------------------

@dataclass
class CorrelationAudit:
    rows: list
    tol: float

    @property
    def f_violations(self) -> int:
        return sum(r["f_violation"] for r in self.rows)

    @property
    def delta_violations(self) -> int:
        return sum(r["delta_violation"] for r in self.rows)

    @property
    def restricted_rows(self) -> int:
        return sum(1 for r in self.rows if r["restricted"])

    @property
    def ok(self) -> bool:
        return self.f_violations == 0 and self.delta_violations == 0

    def positively_correlated(self, t: int, i: int, j: int) -> bool:
        for r in self.rows:
            if (r["t"], r["i"], r["j"]) == (t, i, j):
                return r["joint"] > r["product"]
        raise KeyError((t, i, j))

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = ["t", "i", "j", "joint", "product", "restricted", "f_bound", "delta_bound",
                 "f_violation", "delta_violation"]
        w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], float) else r[k]) for k in names})
        return buf.getvalue()


def correlation_audit(report, sol=None, kappa: float = None, tol: float = 1e-9) -> CorrelationAudit:
    """Check joint availability against the ``f`` and ``Delta`` product bounds.

    The ``f`` bound is applied in round ``t`` when both users were early in
    round ``t - 1`` (always in the first round), using the smaller of the two
    factors ``f(y_i), f(y_j)``.  The ``Delta`` bound is applied everywhere.
    ``sol`` is accepted for interface symmetry; prefix masses come from the
    report.
    """
    kappa = report.kappa if kappa is None else kappa
    d = DerivedConstants(kappa)
    y = report.y
    T, n = y.shape
    rows = []
    for t in range(T):
        for i in range(n):
            for j in range(i + 1, n):
                joint = float(report.pr_joint[t, i, j])
                prod = float(report.pr_free[t, i] * report.pr_free[t, j])
                restricted = t == 0 or (y[t - 1, i] <= d.tau and y[t - 1, j] <= d.tau)
                fb = min(d.f(y[t, i]), d.f(y[t, j])) * prod if restricted else float("nan")
                db = d.delta * prod
                rows.append({"t": t, "i": i, "j": j, "joint": joint, "product": prod,
                             "restricted": int(restricted), "f_bound": fb, "delta_bound": db,
                             "f_violation": int(restricted and joint > fb + tol),
                             "delta_violation": int(joint > db + tol)})
    return CorrelationAudit(rows, tol)


# ---------------------------------------------------------------------------
# ratio report
# ---------------------------------------------------------------------------

ALGORITHMS = ("twoproposal-exact", "twoproposal-sampled", "twoproposal-general", "bdm", "greedy")


@dataclass
class RatioTable:
    rows: list
    notes: list = field(default_factory=list)

    HEADER = ("algorithm", "mean_welfare", "ci_half_width", "lp_objective", "opt_online",
              "ratio_to_lp", "ratio_to_opt_online", "note")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.rows:
            w.writerow([_fmt(r[k]) for k in self.HEADER])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _ratio(a, b):
    if b is None or a is None:
        return None
    if b == 0.0:
        return 1.0 if a == 0.0 else float("inf")
    return a / b


def simulate_algorithm(name: str, inst, sol, trials: int, seed: int, jobs: int = 1,
                       kappa: float = KAPPA, epsilon: float = 0.001, samples=None):
    """Welfare samples of one named algorithm; returns ``(welfare array, extra)``."""
    from capalloc import baselines
    from capalloc.allocator import core
    from capalloc.instance import BernoulliInstance, to_general
    from capalloc.lp import embed_solution

    if name == "bdm":
        res = baselines.run_bdm(inst, sol, seed, trials, jobs)
        return res.welfare, res
    if name == "greedy":
        res = baselines.run_greedy(inst, seed, trials, jobs)
        return res.welfare, res
    if name == "twoproposal-exact":
        cfg = core.AlgoConfig(kappa=kappa, rho_mode="exact", seed=seed)
    elif name == "twoproposal-sampled":
        cfg = core.AlgoConfig(kappa=kappa, epsilon=epsilon, rho_mode="sampled",
                              sample_count_override=samples, seed=seed)
    elif name == "twoproposal-general":
        cfg = core.AlgoConfig(kappa=kappa, rho_mode="exact", seed=seed)
        if isinstance(inst, BernoulliInstance):
            sol = embed_solution(inst, sol)
            inst = to_general(inst)
    else:
        raise ValueError(f"unknown algorithm {name!r}")
    exp = core.prepare(inst, sol, cfg)
    res = core.simulate(exp, trials, seed, jobs)
    return res.welfare, res


def ratio_report(inst, algorithms, trials: int, seed: int, jobs: int = 1,
                 kappa: float = KAPPA, budget: int = None) -> RatioTable:
    """LP optimum, optimum online (when tractable) and each algorithm's welfare."""
    from capalloc.lp import solve_instance
    from capalloc.oracles import DEFAULT_BUDGET, OracleBudgetError, opt_online

    sol = solve_instance(inst)
    notes = []
    try:
        opt = opt_online(inst, budget or DEFAULT_BUDGET).value
    except OracleBudgetError as e:
        opt = None
        notes.append(f"opt_online omitted: {e}")
    rows = []
    for name in algorithms:
        row = {"algorithm": name, "lp_objective": sol.objective, "opt_online": opt, "note": ""}
        try:
            w, _ = simulate_algorithm(name, inst, sol, trials, seed, jobs, kappa)
            mean = float(w.mean())
            ci = float(1.96 * w.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("inf")
            row.update(mean_welfare=mean, ci_half_width=ci,
                       ratio_to_lp=_ratio(mean, sol.objective), ratio_to_opt_online=_ratio(mean, opt))
        except (ValueError, TypeError) as e:
            row.update(mean_welfare=None, ci_half_width=None, ratio_to_lp=None,
                       ratio_to_opt_online=None, note=str(e))
        rows.append(row)
    return RatioTable(rows, notes)


# ---------------------------------------------------------------------------
# tiny-instance suite
# ---------------------------------------------------------------------------

SUITE_SEED = 1000


def tiny_suite(count: int = 25, seed: int = SUITE_SEED) -> list:
    """Deterministic random tiny instances (n, T in 2..4, c in 1..3).

    Families cycle over broad or near-certain arrivals and over mixed or
    unit success probabilities; near-certain arrivals are what produce
    late pairs with positive LP mass.
    """
    out = []
    for k in range(count):
        n = (2, 3, 4)[k % 3]
        T = (2, 3, 4)[(k // 3) % 3]
        p_range = (0.2, 1.0) if k % 2 == 0 else (0.96, 1.0)
        q_range = (0.3, 1.0) if (k // 2) % 2 == 0 else (1.0, 1.0)
        params = RandomParams(n=n, T=T, c_range=(1, 3), v_range=(0.0, 1.0),
                              q_range=q_range, p_range=p_range)
        out.append(gen_random(params, seed + k))
    return out
