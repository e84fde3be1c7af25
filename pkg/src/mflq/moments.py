"""Second-moment dynamics under linear feedback and the exact trace-form cost.

For ``u = L x + Lbar E[x]`` the pair ``X = E[x x']``, ``Xbar = E[x] E[x]'``
evolves deterministically; the cost is a sum of traces against it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problem import FeedbackPolicy, InitialCondition, ProblemError, ProblemSpec
from .riccati import RiccatiSolution

MEAN_CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MomentTrajectory:
    """``X``, ``Xbar``: ``(N+1, n, n)``; ``mean``: ``(N+1, n)``;
    ``stage_cost``: ``(N+1,)`` with the terminal contribution last."""

    X: np.ndarray
    Xbar: np.ndarray
    mean: np.ndarray
    stage_cost: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return self.X - self.Xbar

    @property
    def cost(self) -> float:
        return math.fsum(self.stage_cost)

    def cost_to_go(self) -> np.ndarray:
        """Cost accumulated from stage ``k`` to the end, for each ``k``."""
        return np.array([math.fsum(self.stage_cost[k:]) for k in range(self.stage_cost.size)])


def _sym(M):
    return 0.5 * (M + M.T)


def _check_dims(spec: ProblemSpec, policy: FeedbackPolicy, init: InitialCondition) -> None:
    policy.check(spec)
    if init.dim != spec.n:
        raise ProblemError(f"initial condition has dimension {init.dim}, expected n={spec.n}")


def _phibar(spec: ProblemSpec, k: int, L: np.ndarray, Lb: np.ndarray) -> np.ndarray:
    R = spec.R[k]
    Ls = L + Lb
    return spec.Qbar[k] + Ls.T @ spec.Rbar[k] @ Ls + L.T @ R @ Lb + Lb.T @ R @ L + Lb.T @ R @ Lb


def propagate(spec: ProblemSpec, policy: FeedbackPolicy, init: InitialCondition) -> MomentTrajectory:
    """Propagate ``(X_k, Xbar_k, E[x_k])`` forward under ``policy``.

    The mean-outer-product matrix is advanced with its own congruence
    recursion and cross-checked against ``mean_k mean_k'``.
    """
    _check_dims(spec, policy, init)
    N, n = spec.N, spec.n
    X = np.empty((N + 1, n, n))
    Xb = np.empty((N + 1, n, n))
    mu = np.empty((N + 1, n))
    cost = np.empty(N + 1)
    X[0] = init.second_moment
    Xb[0] = np.outer(init.mean, init.mean)
    mu[0] = init.mean
    for k in range(N):
        A, Ab, B, Bb = spec.A[k], spec.Abar[k], spec.B[k], spec.Bbar[k]
        C, Cb, D, Db = spec.C[k], spec.Cbar[k], spec.D[k], spec.Dbar[k]
        L = policy.L[k]
        Lb = policy.M[k] - policy.L[k]
        Ls = L + Lb

        cost[k] = (np.trace((spec.Q[k] + L.T @ spec.R[k] @ L) @ X[k])
                   + np.trace(_phibar(spec, k, L, Lb) @ Xb[k]))

        F = A + B @ L                      # acts on x
        Fm = Ab + B @ Lb + Bb @ Ls         # acts on E[x]
        G = C + D @ L
        Gm = Cb + D @ Lb + Db @ Ls
        X[k + 1] = _sym(
            F @ X[k] @ F.T + F @ Xb[k] @ Fm.T + Fm @ Xb[k] @ F.T + Fm @ Xb[k] @ Fm.T
            + G @ X[k] @ G.T + G @ Xb[k] @ Gm.T + Gm @ Xb[k] @ G.T + Gm @ Xb[k] @ Gm.T
        )
        Fbar = A + Ab + (B + Bb) @ Ls
        Xb[k + 1] = _sym(Fbar @ Xb[k] @ Fbar.T)
        mu[k + 1] = Fbar @ mu[k]

        outer = np.outer(mu[k + 1], mu[k + 1])
        gap = np.max(np.abs(Xb[k + 1] - outer))
        if gap > MEAN_CONSISTENCY_TOL * (1.0 + np.max(np.abs(outer))):
            raise ArithmeticError(f"mean outer product drifted at stage {k + 1}: {gap:.3e}")

    cost[N] = np.trace(spec.G_N @ X[N]) + np.trace(spec.Gbar_N @ Xb[N])
    return MomentTrajectory(X, Xb, mu, cost)


def exact_cost(spec: ProblemSpec, policy: FeedbackPolicy, init: InitialCondition) -> float:
    """Expected cost of ``policy`` from ``init``, computed from the moments."""
    return propagate(spec, policy, init).cost


def optimal_value(sol: RiccatiSolution, init: InitialCondition) -> float:
    """Optimal cost ``tr(S_0 Cov[zeta]) + E[zeta]' T_0 E[zeta]``."""
    mu = init.mean
    return math.fsum([float(np.trace(sol.S[0] @ init.covariance)), float(mu @ sol.T[0] @ mu)])


def mean_path(spec: ProblemSpec, policy: FeedbackPolicy, mean0: np.ndarray) -> np.ndarray:
    """Deterministic ``E[x_k]`` under ``policy`` (``E[u_k] = M_k E[x_k]``)."""
    mu = np.empty((spec.N + 1, spec.n))
    mu[0] = mean0
    for k in range(spec.N):
        mu[k + 1] = spec.A_mean[k] @ mu[k] + spec.B_mean[k] @ (policy.M[k] @ mu[k])
    return mu
