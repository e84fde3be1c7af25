"""Seeded Monte Carlo simulation of the closed-loop mean-field system.

:func:`simulate` draws sample paths of the true mean-field dynamics, in which
``E[x_k]`` and ``E[u_k]`` are the deterministic mean path.
:func:`simulate_particles` runs the finite interacting-particle system that
replaces those expectations by empirical averages.

Randomness is drawn in fixed blocks of :data:`BLOCK` paths, block ``b``
using its own stream spawned from ``(seed, b)``. Path ``i`` therefore sees
the same noise whatever ``n_paths`` is or however the work is sharded.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .moments import mean_path
from .problem import FeedbackPolicy, InitialCondition, ProblemError, ProblemSpec

BLOCK = 4096


class NoiseModel(enum.Enum):
    """I.i.d. scalar noise with zero mean and unit variance."""

    RADEMACHER = "rademacher"
    STANDARD_NORMAL = "standard_normal"

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self is NoiseModel.RADEMACHER:
            return 2.0 * rng.integers(0, 2, size=shape) - 1.0
        return rng.standard_normal(shape)


def _rng(seed: int, *key: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be a nonnegative integer, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True, eq=False)
class SimulationResult:
    cost_mean: float
    cost_stderr: float
    n_paths: int
    state_mean: np.ndarray    # (N+1, n) sample mean of x_k
    state_stderr: np.ndarray  # (N+1, n)
    seed: int
    noise: NoiseModel

    def to_dict(self) -> dict:
        stderr = self.cost_stderr if math.isfinite(self.cost_stderr) else None
        return {"cost_mean": self.cost_mean, "cost_stderr": stderr,
                "n_paths": self.n_paths, "seed": self.seed, "noise": self.noise.value}

    def confidence_rows(self, z: float = 3.0) -> list[list]:
        """``[k, i, mean, lower, upper]`` per stage and coordinate."""
        rows = []
        for k, (mu, se) in enumerate(zip(self.state_mean, self.state_stderr)):
            for i in range(mu.size):
                rows.append([k, i, mu[i], mu[i] - z * se[i], mu[i] + z * se[i]])
        return rows


def _draws(init, noise, n_paths, N, seed):
    """Initial states ``(n_paths, n)`` and noise ``(n_paths, N)``, block by block."""
    x0, w = [], []
    for b in range(-(-n_paths // BLOCK)):
        rng = _rng(seed, b)
        x0.append(init.sample(rng, BLOCK))
        w.append(noise.sample(rng, (BLOCK, N)))
    return np.concatenate(x0)[:n_paths], np.concatenate(w)[:n_paths]


@dataclass(frozen=True, eq=False)
class SamplePaths:
    states: np.ndarray     # (n_paths, N+1, n)
    controls: np.ndarray   # (n_paths, N, m)
    costs: np.ndarray      # (n_paths,)
    mean_path: np.ndarray  # (N+1, n) deterministic E[x_k]


def sample_paths(spec: ProblemSpec, policy: FeedbackPolicy, init: InitialCondition,
                 noise: NoiseModel, n_paths: int, seed: int) -> SamplePaths:
    """Simulate ``n_paths`` independent closed-loop paths.

    The control is ``u = M E[x] + L (x - E[x])`` with the exact mean path,
    and ``E[u_k] = M_k E[x_k]`` wherever the dynamics or cost need it.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be at least 1, got {n_paths}")
    policy.check(spec)
    if init.dim != spec.n:
        raise ProblemError(f"initial condition has dimension {init.dim}, expected n={spec.n}")
    N = spec.N
    mu = mean_path(spec, policy, init.mean)
    x, w = _draws(init, noise, n_paths, N, seed)

    states = np.empty((n_paths, N + 1, spec.n))
    controls = np.empty((n_paths, N, spec.m))
    costs = np.zeros(n_paths)
    states[:, 0] = x
    for k in range(N):
        Ex = mu[k]
        Eu = policy.M[k] @ Ex
        u = Eu + (x - Ex) @ policy.L[k].T
        controls[:, k] = u
        costs += np.einsum("pa,ab,pb->p", x, spec.Q[k], x) + np.einsum("pa,ab,pb->p", u, spec.R[k], u)
        costs += Ex @ spec.Qbar[k] @ Ex + Eu @ spec.Rbar[k] @ Eu
        drift = x @ spec.A[k].T + u @ spec.B[k].T + (spec.Abar[k] @ Ex + spec.Bbar[k] @ Eu)
        diff = x @ spec.C[k].T + u @ spec.D[k].T + (spec.Cbar[k] @ Ex + spec.Dbar[k] @ Eu)
        x = drift + w[:, k, None] * diff
        states[:, k + 1] = x
    costs += np.einsum("pa,ab,pb->p", x, spec.G_N, x) + mu[N] @ spec.Gbar_N @ mu[N]
    return SamplePaths(states, controls, costs, mu)


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    # Sums are exact-rounded and taken in path order, so results do not
    # depend on how paths were batched.
    n = values.size
    mean = math.fsum(values) / n
    if n == 1:
        return mean, math.nan
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def simulate(spec: ProblemSpec, policy: FeedbackPolicy, init: InitialCondition,
             noise: NoiseModel = NoiseModel.STANDARD_NORMAL, n_paths: int = 10_000,
             seed: int = 0) -> SimulationResult:
    """Monte Carlo estimate of the expected cost of ``policy``."""
    paths = sample_paths(spec, policy, init, noise, n_paths, seed)
    cost_mean, cost_stderr = _mean_stderr(paths.costs)
    flat = paths.states.reshape(n_paths, -1)
    stats = [_mean_stderr(flat[:, j]) for j in range(flat.shape[1])]
    shape = paths.states.shape[1:]
    state_mean = np.array([s[0] for s in stats]).reshape(shape)
    state_stderr = np.array([s[1] for s in stats]).reshape(shape)
    return SimulationResult(cost_mean, cost_stderr, n_paths, state_mean, state_stderr, seed, noise)


@dataclass(frozen=True, eq=False)
class ParticleResult:
    empirical_mean: np.ndarray  # (N+1, n)
    mean_path: np.ndarray       # (N+1, n)
    n_particles: int

    @property
    def stage_deviation(self) -> np.ndarray:
        return np.linalg.norm(self.empirical_mean - self.mean_path, axis=1)

    @property
    def deviation(self) -> float:
        return float(self.stage_deviation.max())


def simulate_particles(spec: ProblemSpec, policy: FeedbackPolicy, init: InitialCondition,
                       noise: NoiseModel = NoiseModel.STANDARD_NORMAL, L: int = 1000,
                       seed: int = 0, replication: int = 0) -> ParticleResult:
    """Run ``L`` particles coupled through their empirical mean.

    Each particle applies ``u_i = M xbar + L (x_i - xbar)``, where ``xbar`` is
    the particle average; the control average replaces ``E[u]``. Every
    particle has its own noise draw at every stage.
    """
    if L < 1:
        raise ValueError(f"particle count must be at least 1, got {L}")
    policy.check(spec)
    rng = _rng(seed, L, replication)
    x = init.sample(rng, L)
    w = noise.sample(rng, (L, spec.N))
    emp = np.empty((spec.N + 1, spec.n))
    emp[0] = x.mean(axis=0)
    for k in range(spec.N):
        xbar = emp[k]
        u = xbar @ policy.M[k].T + (x - xbar) @ policy.L[k].T
        ubar = u.mean(axis=0)
        drift = x @ spec.A[k].T + u @ spec.B[k].T + (spec.Abar[k] @ xbar + spec.Bbar[k] @ ubar)
        diff = x @ spec.C[k].T + u @ spec.D[k].T + (spec.Cbar[k] @ xbar + spec.Dbar[k] @ ubar)
        x = drift + w[:, k, None] * diff
        emp[k + 1] = x.mean(axis=0)
    return ParticleResult(emp, mean_path(spec, policy, init.mean), L)


def particle_convergence(spec: ProblemSpec, policy: FeedbackPolicy, init: InitialCondition,
                         counts=(100, 1000, 10_000), replications: int = 50,
                         noise: NoiseModel = NoiseModel.STANDARD_NORMAL, seed: int = 0) -> dict:
    """Median deviation from the mean path for each particle count."""
    counts = [int(c) for c in counts]
    medians = []
    for L in counts:
        devs = [simulate_particles(spec, policy, init, noise, L, seed, r).deviation
                for r in range(replications)]
        medians.append(float(np.median(devs)))
    ratios = [b / a if a > 0 else math.nan for a, b in zip(medians, medians[1:])]
    return {"counts": counts, "replications": replications, "seed": seed,
            "noise": noise.value, "median_deviation": medians, "ratios": ratios}
