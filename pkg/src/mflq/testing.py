"""Random problem and policy generators for tests and experiments."""
from __future__ import annotations

import numpy as np

from .problem import FeedbackPolicy, ProblemSpec


def _psd(rng, d, rank=None):
    W = rng.standard_normal((d, rank if rank is not None else d))
    return W @ W.T / d


def random_problem(rng: np.random.Generator, n: int, m: int, N: int,
                   mean_field: bool = True, noise: bool = True) -> ProblemSpec:
    """Random instance satisfying the standard condition.

    Dynamics entries are uniform on [-1, 1]. State weights are PSD and
    possibly singular; barred weights are generally indefinite but keep the
    combined weights PSD (state) or PD (control).
    """
    def dyn(r, c):
        return rng.uniform(-1, 1, (N, r, c))

    Q = np.stack([_psd(rng, n, rng.integers(1, n + 1)) for _ in range(N)])
    Qtot = np.stack([_psd(rng, n, rng.integers(1, n + 1)) for _ in range(N)])
    R = np.stack([0.2 * np.eye(m) + _psd(rng, m) for _ in range(N)])
    Rtot = np.stack([0.2 * np.eye(m) + _psd(rng, m) for _ in range(N)])
    G = _psd(rng, n, rng.integers(1, n + 1))
    Gtot = _psd(rng, n, rng.integers(1, n + 1))
    f = 1.0 if mean_field else 0.0
    g = 1.0 if noise else 0.0
    return ProblemSpec(
        n=n, m=m, N=N,
        A=dyn(n, n), Abar=f * dyn(n, n), B=dyn(n, m), Bbar=f * dyn(n, m),
        C=g * dyn(n, n), Cbar=f * g * dyn(n, n), D=g * dyn(n, m), Dbar=f * g * dyn(n, m),
        Q=Q, Qbar=f * (Qtot - Q), R=R, Rbar=f * (Rtot - R),
        G_N=G, Gbar_N=f * (Gtot - G),
    )


def random_policy(rng: np.random.Generator, spec: ProblemSpec, scale: float = 0.5) -> FeedbackPolicy:
    shape = (spec.N, spec.m, spec.n)
    return FeedbackPolicy(scale * rng.standard_normal(shape), scale * rng.standard_normal(shape))


def perturb(policy: FeedbackPolicy, rng: np.random.Generator, magnitude: float) -> FeedbackPolicy:
    """Add a random direction of Frobenius norm ``magnitude`` to all gains jointly."""
    dL = rng.standard_normal(policy.L.shape)
    dM = rng.standard_normal(policy.M.shape)
    norm = np.sqrt(np.sum(dL**2) + np.sum(dM**2))
    return FeedbackPolicy(policy.L + magnitude * dL / norm, policy.M + magnitude * dM / norm)
