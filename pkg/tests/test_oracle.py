from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mflq.moments import exact_cost, optimal_value
from mflq.oracle import (MAX_HORIZON, CapacityError, OracleError, QuadraticForm, assemble,
                         eval_policy_on_tree, feedback_gap, make_tree, policy_controls,
                         solve_open_loop, tree_cost, verify)
from mflq.problem import FeedbackPolicy, InitialCondition
from mflq.riccati import optimal_policy, solve_riccati
from mflq.testing import random_policy, random_problem
from test_problem import zero_spec
from test_riccati import scalar_spec


def random_case(seed, N_max=6):
    rng = np.random.default_rng(seed)
    n, m, N = (int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(1, N_max + 1)))
    return rng, random_problem(rng, n, m, N), rng.standard_normal(n)


class TestTree:
    def test_counts(self, bench):
        tree = make_tree(bench, np.ones(3))
        assert tree.total_nodes == 2**5 - 1
        assert tree.n_controls == 2 * (2**4 - 1)
        for k in range(5):
            assert tree.node_probs(k).sum() == pytest.approx(1.0, abs=1e-15)

    def test_history(self, bench):
        tree = make_tree(bench, np.ones(3))
        assert tree.history(3, 0b101) == (0, (1, -1, 1))
        assert tree.history(0, 0) == (0, ())

    def test_forest(self, bench):
        init = InitialCondition.finite_support([[1, 0, 0], [0, 1, 0]], [0.4, 0.6])
        tree = make_tree(bench, init)
        assert tree.n_atoms == 2
        assert tree.n_controls == 2 * 2 * 15
        assert np.allclose(tree.node_probs(2), [0.1] * 4 + [0.15] * 4)
        assert tree.history(2, 6) == (1, (1, -1))

    def test_capacity_horizon(self):
        spec = zero_spec(N=MAX_HORIZON + 1)
        with pytest.raises(CapacityError, match="smaller horizon"):
            assemble(spec, [1.0])

    def test_capacity_memory(self):
        spec = zero_spec(n=2, m=2, N=MAX_HORIZON)
        with pytest.raises(CapacityError, match="GiB"):
            make_tree(spec, [1.0, 1.0])

    def test_dimension_check(self, bench):
        with pytest.raises(ValueError):
            make_tree(bench, [1.0, 1.0])


class TestAssemble:
    def test_scalar_form(self):
        form = assemble(scalar_spec(), [1.0])
        assert form.Theta1.shape == (1, 1)
        assert form.Theta1[0, 0] == pytest.approx(10.0, rel=1e-15)
        assert form.theta2[0] == pytest.approx(8.0, rel=1e-15)
        assert form.theta3 == pytest.approx(8.0, rel=1e-15)

    @pytest.mark.parametrize("zeta", [-2.0, 0.5, 3.0])
    def test_scalar_form_scales_with_zeta(self, zeta):
        form = assemble(scalar_spec(), [zeta])
        assert form.theta2[0] == pytest.approx(8.0 * zeta, rel=1e-15)
        assert form.theta3 == pytest.approx(8.0 * zeta**2, rel=1e-15)

    def test_zero_dynamics(self):
        rng = np.random.default_rng(4)
        spec = random_problem(rng, 2, 2, 3)
        zeros = {name: np.zeros_like(getattr(spec, name))
                 for name in ("A", "Abar", "B", "Bbar", "C", "Cbar", "D", "Dbar")}
        spec = spec.replace(**zeros)
        form = assemble(spec, [1.0, -1.0])
        tree = form.tree
        expected = np.zeros_like(form.Theta1)
        for k in range(spec.N):
            p = tree.node_probs(k)
            off = tree.control_offset(k)
            block = np.kron(np.diag(p), spec.R[k]) + np.kron(np.outer(p, p), spec.Rbar[k])
            s = slice(off, off + block.shape[0])
            expected[s, s] = block
        assert np.allclose(form.Theta1, expected, rtol=0, atol=1e-15)
        assert not np.any(form.theta2)
        theta3 = np.array([1.0, -1.0]) @ (spec.Q[0] + spec.Qbar[0]) @ np.array([1.0, -1.0])
        assert form.theta3 == pytest.approx(theta3, rel=1e-14)
        res = solve_open_loop(form)
        assert not np.any(res.u)
        assert res.cost == form.theta3

    @pytest.mark.parametrize("seed", range(6))
    def test_finite_differences(self, seed):
        rng, spec, zeta = random_case(seed)
        form = assemble(spec, zeta)
        u0 = rng.standard_normal(form.tree.n_controls)
        J0 = tree_cost(spec, zeta, u0)
        assert form(u0) == pytest.approx(J0, rel=1e-10)
        h = 0.5
        for _ in range(20):
            d = rng.standard_normal(u0.size)
            Jp, Jm = tree_cost(spec, zeta, u0 + h * d), tree_cost(spec, zeta, u0 - h * d)
            curv = (Jp - 2 * J0 + Jm) / (2 * h * h)
            assert curv == pytest.approx(d @ form.Theta1 @ d, rel=1e-8)
            grad = (Jp - Jm) / (2 * h)
            exact = 2 * d @ (form.Theta1 @ u0 + form.theta2)
            assert abs(grad - exact) <= 1e-8 * (abs(exact) + abs(J0))

    def test_symmetric(self, bench):
        form = assemble(bench, np.ones(3))
        assert np.array_equal(form.Theta1, form.Theta1.T)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_theta1_positive_definite(self, seed):
        _, spec, zeta = random_case(seed)
        assert assemble(spec, zeta).min_eig() > 0


class TestOpenLoop:
    def test_scalar(self):
        res = solve_open_loop(assemble(scalar_spec(), [1.0]))
        assert res.u[0] == pytest.approx(-0.8, rel=1e-15)
        assert res.cost == pytest.approx(1.6, rel=1e-14)

    def test_benchmark(self, bench, bench_sol):
        form = assemble(bench, np.ones(3))
        res = solve_open_loop(form)
        assert res.cost == pytest.approx(bench_sol.T[0].sum(), rel=1e-7)
        assert res.residual <= 1e-9 * np.max(np.abs(form.theta2))

    def test_not_positive_definite(self):
        tree = make_tree(scalar_spec(), [1.0])
        form = QuadraticForm(np.array([[-1.0]]), np.array([1.0]), 0.0, tree)
        with pytest.raises(OracleError):
            solve_open_loop(form)

    @pytest.mark.parametrize("seed", range(10))
    def test_riccati_agreement(self, seed):
        _, spec, zeta = random_case(1000 + seed, N_max=8)
        sol = solve_riccati(spec)
        opt = optimal_value(sol, InitialCondition.deterministic(zeta))
        res = solve_open_loop(assemble(spec, zeta))
        assert abs(res.cost - opt) <= 1e-7 * (1 + abs(opt))

    @pytest.mark.parametrize("seed", range(5))
    def test_feedback_realizability(self, seed):
        _, spec, zeta = random_case(2000 + seed)
        pol = optimal_policy(solve_riccati(spec))
        res = solve_open_loop(assemble(spec, zeta))
        assert feedback_gap(spec, pol, zeta, res.u) <= 1e-7
        u_fb, _ = policy_controls(spec, pol, zeta)
        assert np.max(np.abs(u_fb - res.u)) <= 1e-7

    def test_finite_support(self, bench, bench_sol, bench_policy):
        init = InitialCondition.finite_support([[1, 1, 1], [2, -1, 0], [0, 0, 3]], [0.5, 0.25, 0.25])
        rep = verify(bench, init)
        assert rep["rel_diff"] <= 1e-9
        assert rep["per_node_gain_residual_max"] <= 1e-7
        assert eval_policy_on_tree(bench, bench_policy, init) == pytest.approx(
            optimal_value(bench_sol, init), rel=1e-10)


class TestPolicyEvaluation:
    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_matches_moments(self, seed):
        rng, spec, zeta = random_case(seed, N_max=8)
        pol = random_policy(rng, spec)
        a = eval_policy_on_tree(spec, pol, zeta)
        b = exact_cost(spec, pol, InitialCondition.deterministic(zeta))
        assert a == pytest.approx(b, rel=1e-10)

    def test_optimal_policy_attains_open_loop(self, bench, bench_policy):
        res = solve_open_loop(assemble(bench, np.ones(3)))
        assert eval_policy_on_tree(bench, bench_policy, np.ones(3)) == pytest.approx(res.cost, rel=1e-9)

    def test_zero_policy_terminal_only(self):
        rng = np.random.default_rng(9)
        spec = random_problem(rng, 3, 2, 4, noise=False)
        spec = spec.replace(Q=np.zeros((4, 3, 3)), Qbar=np.zeros((4, 3, 3)),
                            R=np.zeros((4, 2, 2)), Rbar=np.zeros((4, 2, 2)),
                            G_N=np.eye(3), Gbar_N=np.zeros((3, 3)))
        zeta = np.array([1.0, -0.5, 2.0])
        x = zeta
        for k in range(spec.N):
            x = (spec.A[k] + spec.Abar[k]) @ x
        pol = FeedbackPolicy.zeros(spec.N, 2, 3)
        assert eval_policy_on_tree(spec, pol, zeta) == pytest.approx(x @ x, rel=1e-13)

    def test_policy_controls_cost_matches_form(self, bench):
        pol = random_policy(np.random.default_rng(3), bench)
        u, cost = policy_controls(bench, pol, np.ones(3))
        assert assemble(bench, np.ones(3))(u) == pytest.approx(cost, rel=1e-10)


class TestVerify:
    def test_report(self, bench):
        rep = verify(bench, np.ones(3))
        assert set(rep) >= {"cost_riccati", "cost_oracle", "abs_diff", "rel_diff",
                            "theta1_min_eig", "per_node_gain_residual_max"}
        assert rep["rel_diff"] <= 1e-7
        assert rep["theta1_min_eig"] > 0
        assert rep["per_node_gain_residual_max"] <= 1e-7
