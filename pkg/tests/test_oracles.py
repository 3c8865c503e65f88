import json
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from capalloc import instance as I
from capalloc import lp
from capalloc import oracles as O
from conftest import random_instance, solved

A = 0.5115


def brute_force_online(inst):
    """Independent recursion over explicit availability sets."""
    g = I.as_general(inst)

    def value(t, avail):
        if t == g.T:
            return 0.0
        total = 0.0
        for r in g.rounds[t]:
            best = value(t + 1, avail)
            users = sorted(avail)
            for pick in product([0, 1], repeat=len(users)):
                chosen = [u for u, b in zip(users, pick) if b]
                if not chosen or len(chosen) > r.c:
                    continue
                exp = 0.0
                for ok in product([0, 1], repeat=len(chosen)):
                    pr = np.prod([r.q[u] if o else 1 - r.q[u] for u, o in zip(chosen, ok)])
                    won = {u for u, o in zip(chosen, ok) if o}
                    exp += pr * (sum(r.values[u] for u in won) + value(t + 1, avail - won))
                best = max(best, exp)
            total += r.p * best
        return total

    return value(0, frozenset(range(g.n)))


class TestOptOnline:
    def test_lp_gap(self, lp_gap):
        assert O.opt_online(lp_gap).value == 1.5

    def test_bdm(self):
        assert O.opt_online(I.gen_bdm_counterexample(4)).value >= 16.0

    def test_single_edge(self, single_edge):
        assert O.opt_online(single_edge).value == 1.0

    def test_budget_error_reports_requirement(self):
        g = random_instance(0, n=8, T=4)
        need = O.opt_online_work(g)
        with pytest.raises(O.OracleBudgetError) as err:
            O.opt_online(g, budget=need - 1)
        assert err.value.required == need and str(need) in str(err.value)

    def test_user_limit(self):
        with pytest.raises(O.OracleBudgetError):
            O.opt_online(random_instance(0, n=13, T=1))

    @given(st.integers(0, 100_000))
    def test_matches_brute_force(self, seed):
        g = random_instance(seed, n=3, T=3)
        assert O.opt_online(g).value == pytest.approx(brute_force_online(g), abs=1e-12)

    @given(st.integers(0, 100_000))
    def test_monotone_in_available_set(self, seed):
        g = random_instance(seed, n=3, T=3)
        V = O.opt_online(g, keep_table=True).table
        for mask in range(8):
            for i in range(3):
                assert np.all(V[:, mask] <= V[:, mask | 1 << i] + 1e-12)

    def test_general_and_bernoulli_agree(self):
        g = random_instance(12, n=3, T=3)
        assert O.opt_online(I.to_general(g)).value == pytest.approx(O.opt_online(g).value, abs=1e-12)


class TestExactReport:
    def test_lp_gap_marginals(self, lp_gap):
        inst, sol = solved(lp_gap)
        rep = O.exact_report(inst, sol)
        assert np.allclose(rep.pr_alloc, A * rep.x, atol=1e-12)
        assert rep.welfare == pytest.approx(A * 2.0, abs=1e-12)

    def test_positive_correlation_closed_form(self):
        inst, sol = solved(I.gen_positive_correlation(0.1))
        rep = O.exact_report(inst, sol)
        # both users are always proposed and accepted independently w.p. A
        assert rep.pr_free[1, 0] == pytest.approx(1 - 0.1 * A, abs=1e-15)
        assert rep.pr_joint[1, 0, 1] == pytest.approx(1 - 0.1 * (1 - (1 - A) ** 2), abs=1e-15)
        assert rep.pr_joint[1, 0, 1] > rep.pr_free[1, 0] * rep.pr_free[1, 1]

    def test_zero_success_keeps_everyone(self):
        g = random_instance(3, q=(0.0, 0.0))
        inst, sol = solved(g)
        rep = O.exact_report(inst, sol)
        assert np.all(rep.pr_free == 1.0) and rep.welfare == 0.0

    def test_size_limit(self):
        inst, sol = solved(random_instance(0, n=7, T=2))
        with pytest.raises(O.OracleBudgetError):
            O.exact_report(inst, sol)

    @given(st.integers(0, 100_000))
    def test_marginal_law_and_invariants(self, seed):
        inst, sol = solved(random_instance(seed, n=3, T=3, p=(0.6, 1.0)))
        rep = O.exact_report(inst, sol)
        assert rep.marginal_error <= 1e-9
        assert rep.capacity_ok
        assert rep.max_beta_ratio <= 1.0
        assert np.all((rep.pr_free >= -1e-15) & (rep.pr_free <= 1 + 1e-12))
        for t in range(inst.T + 1):
            J = rep.pr_joint[t]
            assert np.all(J <= np.minimum.outer(rep.pr_free[t], rep.pr_free[t]) + 1e-12)

    @given(st.integers(0, 100_000))
    def test_early_availability_closed_form(self, seed):
        inst, sol = solved(random_instance(seed, n=3, T=3))
        rep = O.exact_report(inst, sol)
        early = ~rep.late
        assert np.allclose(rep.pr_free[:-1][early], (1 - A * rep.y)[early], atol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_late_pair_normalizer_floor(self, seed):
        inst, sol = solved(random_instance(seed, n=4, T=4, q=(1.0, 1.0), p=(0.96, 1.0)))
        rep = O.exact_report(inst, sol)
        rho = rep.late_rho_values()
        assert np.all(rho >= 0.02389 - 1e-6)
        assert rep.max_beta_ratio <= 1.0

    def test_exports(self, lp_gap):
        inst, sol = solved(lp_gap)
        rep = O.exact_report(inst, sol)
        lines = rep.to_csv().splitlines()
        assert lines[0].startswith("t,i,x,") and len(lines) == 1 + 4
        doc = json.loads(rep.to_json())
        assert doc["capacity_ok"] and np.allclose(doc["pr_first"], rep.pr_first)


class TestOffline:
    def test_pick_max(self):
        g = I.BernoulliInstance(2, [I.round_spec(1.0, 1, (3.0, 1.0))])
        est = O.opt_offline_estimate(g, 50, 0)
        assert est.mean == 3.0 and est.ci_half_width == 0.0

    def test_zero_values(self):
        g = I.BernoulliInstance(2, [I.round_spec(0.5, 1, (0.0, 0.0))] * 2)
        assert O.opt_offline_estimate(g, 50, 0).mean == 0.0

    def test_dominates_online(self, lp_gap):
        est = O.opt_offline_estimate(lp_gap, 4000, 1)
        assert est.mean + est.ci_half_width >= 1.5

    @given(st.integers(0, 10_000))
    def test_enumeration_matches_assignment(self, seed):
        rng = np.random.default_rng(seed)
        W = rng.random((4, 5)) * (rng.random((4, 5)) < 0.7)
        caps = rng.integers(0, 4, size=4)
        assert O._offline_enum(W, caps) == pytest.approx(O._offline_assignment(W, caps), abs=1e-12)
