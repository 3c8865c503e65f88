"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line, printed in the terminal summary.
All randomness derives from the fixed SEED below, chosen before any run.
"""
import time

import numpy as np
import pytest

from capalloc import instance as I
from capalloc import lp
from capalloc import pivotal as P
from capalloc.allocator import KAPPA, AlgoConfig, DerivedConstants, prepare, simulate
from capalloc.allocator._fallback import pivot_batch
from capalloc.baselines import run_bdm
from capalloc.diagnostics import (TABLE_ONE, check_kappa_inequality, correlation_audit,
                                  matches_printed, solve_kappa, tiny_suite)
from capalloc.oracles import exact_report, opt_online

SEED = 12345
TRIALS = 100_000
Z = 3.0

RESULTS = {}


def record(num, ok, detail):
    RESULTS[num] = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[num]


@pytest.fixture(scope="module")
def suite():
    return [(inst, lp.solve_instance(inst)) for inst in tiny_suite()]


@pytest.fixture(scope="module")
def reports(suite):
    return [exact_report(inst, sol, check=False) for inst, sol in suite]


def binom_se(p, trials):
    p = np.clip(p, 0.0, 1.0)
    return np.sqrt(p * (1.0 - p) / trials)


def within(freq, center, se, halfwidth=0.0):
    """Largest standardized excess over the band; zero-variance cells must match."""
    excess = np.abs(freq - center) - halfwidth
    if np.any((se == 0.0) & (excess > 1e-12)):
        return float("inf")
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0.0, excess / se, 0.0)
    return float(max(0.0, z.max(initial=0.0)))


def test_criterion_01_lp_gap():
    start = time.perf_counter()
    inst = I.gen_lp_gap()
    sol = lp.solve_instance(inst)
    opt = opt_online(inst).value
    elapsed = time.perf_counter() - start
    ok = (abs(sol.objective - 2.0) <= 1e-8 and opt == 1.5
          and abs(opt / sol.objective - 0.75) <= 1e-8 and elapsed < 1.0)
    record(1, ok, f"lp={sol.objective:.10f} opt_online={opt} ratio={opt / sol.objective:.6f} "
                  f"time={elapsed:.3f}s")


def test_criterion_02_bdm_counterexample():
    start = time.perf_counter()
    inst = I.gen_bdm_counterexample(4)
    sol = lp.solve_instance(inst)
    x_ok = all(abs(sol.get((i, 0)) - 0.75) <= 1e-8 and abs(sol.get((i, 1)) - 0.25) <= 1e-8
               for i in range(4))
    res = run_bdm(inst, sol, SEED, TRIALS)
    sigma = res.welfare.std(ddof=1) / np.sqrt(TRIALS)
    opt = opt_online(inst).value
    elapsed = time.perf_counter() - start
    ok = (x_ok and abs(res.mean_welfare - 7.0) <= Z * sigma and opt >= 16.0
          and res.mean_welfare / opt <= 0.45 and elapsed < 30.0)
    record(2, ok, f"x_ok={x_ok} bdm={res.mean_welfare:.4f}+-{Z * sigma:.4f} opt_online={opt:.4f} "
                  f"ratio={res.mean_welfare / opt:.4f} time={elapsed:.1f}s")


def test_criterion_03_exact_marginal_law(suite):
    start = time.perf_counter()
    worst, cap_ok = 0.0, True
    for inst, sol in suite:
        rep = exact_report(inst, sol, check=False)
        worst = max(worst, rep.marginal_error)
        cap_ok &= rep.capacity_ok
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and cap_ok and len(suite) == 25 and elapsed < 300.0
    record(3, ok, f"instances={len(suite)} max|Pr-0.5115x|={worst:.2e} capacity_ok={cap_ok} "
                  f"time={elapsed:.1f}s")


def test_criterion_04_simulation_matches_oracle(suite, reports):
    worst, pairs = 0.0, 0
    for k, ((inst, sol), rep) in enumerate(zip(suite, reports)):
        exp = prepare(inst, sol, AlgoConfig(rho_mode="exact", seed=SEED))
        freq = simulate(exp, TRIALS, SEED + k).pair_freq()
        p = rep.pr_alloc
        worst = max(worst, within(freq, p, binom_se(p, TRIALS)))
        pairs += p.size
    record(4, worst <= Z, f"pairs={pairs} trials={TRIALS} max_z={worst:.3f} (limit {Z})")


def test_criterion_05_relaxation_chain(suite, reports):
    gap_lp, gap_alg = np.inf, np.inf
    for (inst, sol), rep in zip(suite, reports):
        opt = opt_online(inst).value
        gap_lp = min(gap_lp, sol.objective - opt)
        gap_alg = min(gap_alg, rep.welfare - (0.5 + KAPPA) * sol.objective)
    ok = gap_lp >= -1e-8 and gap_alg >= -1e-9
    record(5, ok, f"min(LP-opt_online)={gap_lp:.3e} min(welfare-0.5115*LP)={gap_alg:.3e}")


def test_criterion_06_pivotal_properties():
    rng = np.random.default_rng(SEED)
    vectors = []
    for _ in range(50):
        n = int(rng.integers(1, 9))
        m = rng.random(n)
        m[rng.random(n) < 0.15] = 1.0
        m[rng.random(n) < 0.15] = 0.0
        k = int(rng.integers(int(np.ceil(m.sum() - 1e-9)), n + 1))
        vectors.append(P.MarginalVector(tuple(m), k))
    p1, p3 = 0.0, 0.0
    for mv in vectors:
        d = P.subset_distribution(mv)
        p1 = max(p1, float(np.abs(P.marginals_of(d, mv.n) - mv.m).max()))
        m = np.array(mv.m)
        for mask in range(1, 1 << mv.n):
            idx = [i for i in range(mv.n) if mask >> i & 1]
            if len(idx) < 2:
                continue
            inc = sum(p for s, p in d.items() if all(i in s for i in idx))
            exc = sum(p for s, p in d.items() if not any(i in s for i in idx))
            p3 = max(p3, inc - m[idx].prod(), exc - (1.0 - m[idx]).prod())
    per = 1_000_000 // len(vectors)
    violations = 0
    for mv in vectors:
        chosen = pivot_batch(np.broadcast_to(np.array(mv.m), (per, mv.n)),
                             rng.random((per, mv.n)), np.full(per, mv.k, dtype=np.int64))
        violations += int((chosen.sum(axis=1) > mv.k).sum())
    ok = p1 <= 1e-12 and p3 <= 1e-12 and violations == 0
    record(6, ok, f"vectors=50 P1_err={p1:.1e} P3_excess={p3:.1e} "
                  f"P2_violations={violations}/{per * len(vectors)}")


def test_criterion_07_correlation_bounds(suite, reports):
    f_viol = d_viol = restricted = 0
    for (inst, sol), rep in zip(suite, reports):
        audit = correlation_audit(rep, sol)
        f_viol += audit.f_violations
        d_viol += audit.delta_violations
        restricted += audit.restricted_rows
    gadget = I.gen_positive_correlation(0.1)
    rep = exact_report(gadget, lp.solve_instance(gadget))
    positive = correlation_audit(rep).positively_correlated(1, 0, 1)
    ok = f_viol == 0 and d_viol == 0 and restricted > 0 and positive
    record(7, ok, f"f_violations={f_viol} (over {restricted} early rows) delta_violations={d_viol} "
                  f"gadget_positive_correlation={positive}")


def test_criterion_08_constants():
    d = DerivedConstants(KAPPA)
    expected = {"tau": (d.tau, 0.955034), "gamma": (d.gamma, 1.53558),
                "delta": (d.delta, 1.68358), "rho_floor": (d.rho_floor, 0.023896)}
    const_ok = all(abs(a - b) <= 1e-4 for a, b in expected.values())
    holds = check_kappa_inequality(0.0115, 1)[0]
    fails = not check_kappa_inequality(0.02, 1)[0]
    table_ok = all(matches_printed(solve_kappa(c), v, dec) for c, (v, dec) in TABLE_ONE.items())
    ok = const_ok and holds and fails and table_ok
    vals = " ".join(f"{k}={a:.7f}" for k, (a, _) in expected.items())
    record(8, ok, f"{vals} (0.0115,1)={holds} (0.02,1)_fails={fails} table_rows_match={table_ok}")


def test_criterion_09_sampled_mode(suite):
    eps = 0.001
    worst = 0.0
    for k, (inst, sol) in enumerate(suite):
        cfg = AlgoConfig(epsilon=eps, rho_mode="sampled", sample_count_override=10_000, seed=SEED)
        freq = simulate(prepare(inst, sol, cfg), TRIALS, SEED + k).pair_freq()
        x = np.array([[sol.get((i, t)) for i in range(inst.n)] for t in range(inst.T)])
        center = (0.5 + cfg.effective_kappa) * x
        se = binom_se(np.maximum(center, freq), TRIALS)
        worst = max(worst, within(freq, center, se, eps * x))
    record(9, worst <= Z, f"N=10000 eps={eps} max_z_outside_band={worst:.3f} (limit {Z})")


def test_criterion_10_general_equivalence(suite):
    worst = 0.0
    for k, (inst, sol) in enumerate(suite):
        cfg = AlgoConfig(rho_mode="exact", seed=SEED)
        a = simulate(prepare(inst, sol, cfg), TRIALS, SEED + k).pair_freq()
        g = I.to_general(inst)
        b = simulate(prepare(g, lp.embed_solution(inst, sol), cfg), TRIALS,
                     SEED + 1000 + k).pair_freq()
        se = np.sqrt(binom_se(a, TRIALS) ** 2 + binom_se(b, TRIALS) ** 2)
        worst = max(worst, within(a, b, se))
    record(10, worst <= Z, f"independent streams, max_z={worst:.3f} (limit {Z})")
