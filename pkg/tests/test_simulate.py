from __future__ import annotations

import json
import math

import numpy as np
import pytest

from mflq.moments import exact_cost, mean_path, optimal_value
from mflq.problem import FeedbackPolicy, InitialCondition
from mflq.riccati import optimal_policy, solve_riccati
from mflq.simulate import (BLOCK, NoiseModel, _rng, particle_convergence, sample_paths, simulate,
                           simulate_particles)
from mflq.testing import random_policy, random_problem

NORMAL, RADEMACHER = NoiseModel.STANDARD_NORMAL, NoiseModel.RADEMACHER


def no_noise_spec(seed=0):
    return random_problem(np.random.default_rng(seed), 3, 2, 5, noise=False)


class TestNoise:
    @pytest.mark.parametrize("noise", list(NoiseModel))
    def test_moments(self, noise):
        w = noise.sample(np.random.default_rng(0), 400_000)
        assert abs(w.mean()) < 0.01
        assert abs(w.var() - 1.0) < 0.01

    def test_rademacher_support(self):
        w = RADEMACHER.sample(np.random.default_rng(0), 1000)
        assert set(np.unique(w)) == {-1.0, 1.0}


class TestSimulate:
    def test_zero_initial_state(self, bench):
        pol = random_policy(np.random.default_rng(1), bench)
        res = simulate(bench, pol, InitialCondition.deterministic(np.zeros(3)), n_paths=500)
        assert res.cost_mean == 0.0
        assert res.cost_stderr == 0.0

    def test_no_noise_channel(self):
        spec = no_noise_spec()
        pol = random_policy(np.random.default_rng(2), spec)
        init = InitialCondition.deterministic([1.0, 0.5, -1.0])
        res = simulate(spec, pol, init, n_paths=300)
        assert res.cost_stderr == 0.0
        assert res.cost_mean == pytest.approx(exact_cost(spec, pol, init), rel=1e-12)

    def test_seed_determinism(self, bench, bench_policy, bench_init):
        a = simulate(bench, bench_policy, bench_init, n_paths=3000, seed=42)
        b = simulate(bench, bench_policy, bench_init, n_paths=3000, seed=42)
        assert a.cost_mean == b.cost_mean and a.cost_stderr == b.cost_stderr
        assert np.array_equal(a.state_mean, b.state_mean)
        c = simulate(bench, bench_policy, bench_init, n_paths=3000, seed=43)
        assert c.cost_mean != a.cost_mean

    def test_path_independent_of_count(self, bench, bench_policy):
        init = InitialCondition.gaussian(np.ones(3), np.eye(3))
        small = sample_paths(bench, bench_policy, init, NORMAL, 10, seed=5)
        large = sample_paths(bench, bench_policy, init, NORMAL, BLOCK + 10, seed=5)
        assert np.array_equal(small.states, large.states[:10])
        assert np.array_equal(small.costs, large.costs[:10])

    def test_reduction_independent_of_partition(self, bench, bench_policy, bench_init):
        # summing shards in path order reproduces the single-run mean exactly
        paths = sample_paths(bench, bench_policy, bench_init, NORMAL, 2 * BLOCK + 7, seed=3)
        res = simulate(bench, bench_policy, bench_init, NORMAL, 2 * BLOCK + 7, seed=3)
        shards = [paths.costs[:100], paths.costs[100:BLOCK + 3], paths.costs[BLOCK + 3:]]
        total = math.fsum(math.fsum(s) for s in shards)
        assert total / paths.costs.size == pytest.approx(res.cost_mean, rel=1e-15)

    def test_benchmark_cost(self, bench, bench_sol, bench_policy, bench_init):
        res = simulate(bench, bench_policy, bench_init, NORMAL, 100_000, seed=0)
        assert abs(res.cost_mean - optimal_value(bench_sol, bench_init)) <= 3 * res.cost_stderr

    def test_unbiased_over_seeds(self, bench, bench_sol, bench_policy, bench_init):
        exact = optimal_value(bench_sol, bench_init)
        hits = 0
        for seed in range(20):
            res = simulate(bench, bench_policy, bench_init, NORMAL, 10_000, seed=seed)
            hits += abs(res.cost_mean - exact) <= 3 * res.cost_stderr
        assert hits >= 18

    def test_mean_path_consistency(self, bench, bench_policy, bench_init):
        n_paths = 100_000
        paths = sample_paths(bench, bench_policy, bench_init, NORMAL, n_paths, seed=11)
        mu = mean_path(bench, bench_policy, bench_init.mean)
        assert np.array_equal(paths.mean_path, mu)
        est = paths.states.mean(axis=0)
        sd = paths.states.std(axis=0, ddof=1)
        for k in range(1, bench.N + 1):
            assert np.linalg.norm(est[k] - mu[k]) <= 5 * np.max(sd[k]) / np.sqrt(n_paths)

    def test_noise_models_agree(self, bench, bench_policy):
        init = InitialCondition.gaussian(np.ones(3), 0.5 * np.eye(3))
        exact = exact_cost(bench, bench_policy, init)
        a = simulate(bench, bench_policy, init, NORMAL, 50_000, seed=1)
        b = simulate(bench, bench_policy, init, RADEMACHER, 50_000, seed=1)
        assert abs(a.cost_mean - b.cost_mean) <= 3 * np.hypot(a.cost_stderr, b.cost_stderr)
        assert abs(b.cost_mean - exact) <= 4 * b.cost_stderr

    def test_single_path(self, bench, bench_policy, bench_init):
        res = simulate(bench, bench_policy, bench_init, n_paths=1)
        assert np.isnan(res.cost_stderr)
        assert res.to_dict()["cost_stderr"] is None

    def test_json_summary(self, bench, bench_policy, bench_init):
        doc = simulate(bench, bench_policy, bench_init, n_paths=100, seed=9).to_dict()
        assert set(doc) >= {"cost_mean", "cost_stderr", "n_paths", "seed"}
        json.dumps(doc)

    def test_confidence_rows(self, bench, bench_policy, bench_init):
        res = simulate(bench, bench_policy, bench_init, n_paths=1000)
        rows = res.confidence_rows()
        assert len(rows) == (bench.N + 1) * bench.n
        for k, i, mean, lo, hi in rows:
            assert lo <= mean <= hi

    @pytest.mark.parametrize("kwargs, match", [
        (dict(n_paths=0), "n_paths"),
        (dict(seed=-1), "seed"),
    ])
    def test_argument_errors(self, bench, bench_policy, bench_init, kwargs, match):
        with pytest.raises(ValueError, match=match):
            simulate(bench, bench_policy, bench_init, **kwargs)

    def test_policy_shape_error(self, bench, bench_init):
        with pytest.raises(ValueError):
            simulate(bench, FeedbackPolicy.zeros(2, 2, 3), bench_init)


class TestParticles:
    def test_single_uncoupled_particle(self):
        rng = np.random.default_rng(12)
        spec = random_problem(rng, 2, 2, 4, mean_field=False)
        L = 0.3 * rng.standard_normal((4, 2, 2))
        pol = FeedbackPolicy(L, L.copy())
        init = InitialCondition.gaussian([1.0, -1.0], np.eye(2))
        res = simulate_particles(spec, pol, init, NORMAL, L=1, seed=4, replication=2)

        g = _rng(4, 1, 2)
        x = init.sample(g, 1)[0]
        w = NORMAL.sample(g, (1, spec.N))[0]
        path = [x]
        for k in range(spec.N):
            u = L[k] @ x
            x = spec.A[k] @ x + spec.B[k] @ u + w[k] * (spec.C[k] @ x + spec.D[k] @ u)
            path.append(x)
        path = np.array(path)
        assert np.allclose(res.empirical_mean, path, rtol=1e-13, atol=1e-13)
        mu = mean_path(spec, pol, init.mean)
        assert res.deviation == pytest.approx(np.max(np.linalg.norm(path - mu, axis=1)), rel=1e-12)

    @pytest.mark.parametrize("count", [1, 10, 1000])
    def test_deterministic_system(self, count):
        spec = no_noise_spec(3)
        pol = random_policy(np.random.default_rng(3), spec)
        init = InitialCondition.deterministic([0.5, 1.0, -2.0])
        res = simulate_particles(spec, pol, init, NORMAL, L=count, seed=0)
        scale = 1 + np.abs(res.mean_path).max()
        assert res.deviation <= 1e-12 * scale

    def test_deterministic_seeding(self, bench, bench_policy, bench_init):
        a = simulate_particles(bench, bench_policy, bench_init, L=200, seed=1, replication=3)
        b = simulate_particles(bench, bench_policy, bench_init, L=200, seed=1, replication=3)
        c = simulate_particles(bench, bench_policy, bench_init, L=200, seed=1, replication=4)
        assert np.array_equal(a.empirical_mean, b.empirical_mean)
        assert not np.array_equal(a.empirical_mean, c.empirical_mean)

    def test_convergence_report(self, bench, bench_policy, bench_init):
        rep = particle_convergence(bench, bench_policy, bench_init, counts=(50, 5000), replications=10)
        assert rep["counts"] == [50, 5000]
        assert rep["median_deviation"][1] < rep["median_deviation"][0]
        json.dumps(rep)

    def test_argument_error(self, bench, bench_policy, bench_init):
        with pytest.raises(ValueError, match="particle count"):
            simulate_particles(bench, bench_policy, bench_init, L=0)
