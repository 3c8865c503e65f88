import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from capalloc import instance as I
from capalloc import lp
from capalloc.oracles import opt_online
from conftest import random_instance


def reference_optimum(model):
    res = linprog(-model.objective, A_ub=model.A, b_ub=model.b, bounds=(0, None), method="highs")
    assert res.status == 0
    return -res.fun


class TestBuildBernoulli:
    def test_lp_gap_counts(self, lp_gap):
        m = lp.build_bernoulli(lp_gap)
        assert m.num_vars == 4
        assert len(m.rows_of("cap_")) == 2
        assert len(m.rows_of("online_")) == 4

    def test_single_edge(self, single_edge):
        m = lp.build_bernoulli(single_edge)
        assert m.num_vars == 1
        assert np.allclose(m.A, [[1.0], [1.0]]) and np.allclose(m.b, [1.0, 1.0])
        assert np.allclose(m.objective, [1.0])

    def test_bdm_capacity_rhs(self):
        m = lp.build_bernoulli(I.gen_bdm_counterexample(4))
        assert m.b[m.row_names.index("cap_0")] == pytest.approx(3.0)

    def test_online_row_has_q_weighted_prefix(self):
        g = I.BernoulliInstance(1, [I.round_spec(1.0, 1, (1.0,), (0.4,)),
                                    I.round_spec(0.5, 1, (1.0,), (1.0,))])
        m = lp.build_bernoulli(g)
        row = m.A[m.row_names.index("online_0_1")]
        assert row[m.index[(0, 0)]] == pytest.approx(0.5 * 0.4)
        assert row[m.index[(0, 1)]] == 1.0

    def test_zero_probability_round_fixed_out(self):
        g = I.BernoulliInstance(2, [I.round_spec(0.0, 1, (1.0, 1.0)),
                                    I.round_spec(1.0, 1, (1.0, 1.0))])
        m = lp.build_bernoulli(g)
        assert (0, 0) not in m.index and (0, 0) in m.fixed_zero
        sol = lp.solve(m)
        assert sol.get((0, 0)) == 0.0 and sol.objective == pytest.approx(1.0)


class TestBuildGeneral:
    def test_lp_gap_embedding_value(self, lp_gap):
        sol = lp.solve_instance(I.to_general(lp_gap))
        assert sol.objective == pytest.approx(2.0, abs=1e-9)

    def test_single_realization_is_fractional_knapsack(self):
        vals = (0.9, 0.2, 0.5, 0.7)
        q = (0.5, 1.0, 1.0, 0.8)
        g = I.GeneralInstance(4, [[I.Realization(1.0, 2, vals, q)]])
        sol = lp.solve_instance(g)
        top2 = sorted((v * qi for v, qi in zip(vals, q)), reverse=True)[:2]
        assert sol.objective == pytest.approx(sum(top2), abs=1e-9)

    def test_stochastic_flag_irrelevant_when_q_is_one(self, lp_gap):
        g = I.to_general(lp_gap)
        a = lp.build_general(g, stochastic=True)
        b = lp.build_general(g, stochastic=False)
        assert np.array_equal(a.A, b.A) and np.array_equal(a.b, b.b)

    def test_default_stochastic_follows_q(self):
        g = I.to_general(random_instance(1, q=(0.3, 0.9)))
        assert lp.build_general(g).stochastic
        assert not lp.build_general(I.to_general(I.gen_lp_gap())).stochastic

    def test_user_rows_and_capacity_rhs(self, lp_gap):
        m = lp.build_general(I.to_general(lp_gap))
        assert len(m.rows_of("user_")) == 2
        assert m.b[m.row_names.index("cap_0_0")] == pytest.approx(1.0)


class TestSolve:
    def test_lp_gap(self, lp_gap):
        sol = lp.solve_instance(lp_gap)
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(2.0, abs=1e-8)

    def test_bdm_unique_optimum(self):
        sol = lp.solve_instance(I.gen_bdm_counterexample(4))
        assert sol.objective == pytest.approx(19.0, abs=1e-8)
        for i in range(4):
            assert sol.get((i, 0)) == pytest.approx(0.75, abs=1e-9)
            assert sol.get((i, 1)) == pytest.approx(0.25, abs=1e-9)

    def test_zero_values(self):
        g = I.BernoulliInstance(2, [I.round_spec(0.7, 1, (0.0, 0.0))] * 3)
        assert lp.solve_instance(g).objective == 0.0

    def test_deterministic(self):
        m = lp.build(random_instance(5, n=4, T=4))
        a, b = lp.solve(m), lp.solve(m)
        assert np.array_equal(a.values, b.values)

    @given(st.integers(0, 100_000))
    def test_matches_reference_solver(self, seed):
        g = random_instance(seed, n=4, T=4)
        for model in (lp.build(g), lp.build_general(I.to_general(g))):
            sol = lp.solve(model)
            assert sol.status == "optimal"
            assert lp.check_feasibility(sol, model, 1e-8) == []
            assert sol.objective == pytest.approx(reference_optimum(model), abs=1e-8)
            assert sol.objective == pytest.approx(float(model.objective @ sol.values), abs=1e-9)

    @given(st.integers(0, 100_000))
    def test_upper_bounds_optimum_online(self, seed):
        g = random_instance(seed, n=3, T=3)
        assert lp.solve_instance(g).objective >= opt_online(g).value - 1e-8

    @given(st.integers(0, 100_000))
    def test_user_mass_at_most_one(self, seed):
        g = random_instance(seed, n=3, T=4)
        sol = lp.solve_instance(g)
        for i in range(g.n):
            assert lp.y_prefix(sol, i, g.T) <= 1.0 + 1e-9

    @given(st.integers(0, 100_000), st.floats(0.1, 20.0))
    def test_value_scaling(self, seed, scale):
        g = random_instance(seed, n=3, T=3)
        h = I.BernoulliInstance(g.n, [I.RoundSpec(r.p, r.c, [v * scale for v in r.values], r.q)
                                      for r in g.rounds])
        a, b = lp.solve_instance(g).objective, lp.solve_instance(h).objective
        assert b == pytest.approx(scale * a, rel=1e-9, abs=1e-9)


class TestFeasibilityAndPrefix:
    def test_first_prefix_is_zero(self, lp_gap):
        sol = lp.solve_instance(lp_gap)
        assert lp.y_prefix(sol, 0, 0) == 0.0

    def test_prefix_on_half_solution(self, lp_gap):
        m = lp.build(lp_gap)
        sol = lp.LpSolution(m, np.full(m.num_vars, 0.5), 2.0, "optimal")
        assert lp.check_feasibility(sol, m) == []
        assert lp.y_prefix(sol, 0, 1) == pytest.approx(0.5)

    def test_perturbation_reported(self, lp_gap):
        m = lp.build(lp_gap)
        tol = 1e-8
        vals = np.full(m.num_vars, 0.5)
        vals[m.index[(0, 1)]] += 2 * tol
        bad = lp.check_feasibility(lp.LpSolution(m, vals, 0.0, "optimal"), m, tol)
        # x = 1/2 makes every row containing x_{0,1} tight
        assert sorted(name for name, _ in bad) == ["cap_1", "online_0_1"]
        assert all(v == pytest.approx(2 * tol, rel=1e-3) for _, v in bad)


class TestFiles:
    def test_solution_round_trip(self, tmp_path, lp_gap):
        sol = lp.solve_instance(lp_gap)
        lp.write_solution(sol, tmp_path / "s.json")
        back = lp.read_solution(tmp_path / "s.json", lp_gap)
        assert np.array_equal(back.values, sol.values) and back.objective == sol.objective

    def test_solution_kind_mismatch(self, tmp_path, lp_gap):
        lp.write_solution(lp.solve_instance(lp_gap), tmp_path / "s.json")
        with pytest.raises(I.InstanceFormatError):
            lp.read_solution(tmp_path / "s.json", I.to_general(lp_gap))

    def test_lp_text(self, lp_gap):
        text = lp.to_lp_text(lp.build(lp_gap))
        assert text.lower().startswith("maximize") and "subject to" in text.lower()
        assert "cap_0" in text and text.rstrip().lower().endswith("end")
