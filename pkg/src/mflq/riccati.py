"""Backward Riccati recursions for the mean-field LQ problem.

Two coupled recursions run from ``k = N-1`` down to ``0``::

    W1 = R + B' S B + D' S D                      H1 = B' S A + D' S C
    W2 = R + Rbar + B~' T B~ + D~' S D~           H2 = B~' T A~ + D~' S C~
    S_k = Q + A' S A + C' S C - H1' W1^-1 H1
    T_k = Q + Qbar + C~' S C~ + A~' T A~ - H2' W2^-1 H2

with ``S_N = G_N``, ``T_N = G_N + Gbar_N`` and ``X~ = X + Xbar``; S and T on
the right-hand sides are taken at stage ``k+1``. The optimal control is
``u = M E[x] + L (x - E[x])`` with ``L = -W1^-1 H1`` and ``M = -W2^-1 H2``.

:func:`solve_principle` runs the separate recursion for the multipliers
``(P, Pbar)`` of the matrix minimum principle, which must reproduce
``P = S`` and ``P + Pbar = T``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .problem import FeedbackPolicy, ProblemSpec, ValidationError, validate


class SolverError(ArithmeticError):
    """A weight matrix that must be positive definite failed to factor."""

    def __init__(self, stage: int, which: str, detail: str = ""):
        msg = f"{which}_{stage} is not positive definite"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.stage = stage
        self.which = which


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def spd_solve(W: np.ndarray, H: np.ndarray, stage: int, which: str) -> np.ndarray:
    """Solve ``W X = H`` for symmetric positive definite ``W`` via Cholesky."""
    try:
        factor = cho_factor(W, lower=True, check_finite=True)
    except (LinAlgError, ValueError) as exc:
        raise SolverError(stage, which, str(exc)) from None
    return cho_solve(factor, H)


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Output of :func:`solve_riccati`.

    ``S`` and ``T`` have shape ``(N+1, n, n)``; ``W1``, ``W2`` are
    ``(N, m, m)``; ``H1``, ``H2``, ``L``, ``M`` are ``(N, m, n)``.
    """

    S: np.ndarray
    T: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    L: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        for name in ("S", "T", "W1", "W2", "H1", "H2", "L", "M"):
            getattr(self, name).setflags(write=False)

    @property
    def N(self) -> int:
        return self.L.shape[0]

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist()
                for name in ("S", "T", "W1", "W2", "H1", "H2", "L", "M")}


@dataclass(frozen=True, eq=False)
class PrincipleSolution:
    """Minimum-principle multipliers ``P``, ``Pbar`` (``(N+1, n, n)``) and the
    mean gain ``Lbar`` of the ``u = L x + Lbar E[x]`` form (``(N, m, n)``)."""

    P: np.ndarray
    Pbar: np.ndarray
    L: np.ndarray
    Lbar: np.ndarray

    def to_dict(self) -> dict:
        return {"P": self.P.tolist(), "Pbar": self.Pbar.tolist(), "Lbar": self.Lbar.tolist()}


def solve_riccati(spec: ProblemSpec, check: bool = True) -> RiccatiSolution:
    """Solve the coupled S/T recursions and return the optimal gains.

    Parameters
    ----------
    spec : ProblemSpec
    check : bool
        Validate the standard condition first and raise
        :class:`~mflq.problem.ValidationError` if it fails.

    Raises
    ------
    SolverError
        If ``W1_k`` or ``W2_k`` cannot be Cholesky-factored.
    """
    if check:
        report = validate(spec)
        if not report.satisfied:
            raise ValidationError(report)
    N, n, m = spec.N, spec.n, spec.m
    S = np.empty((N + 1, n, n))
    T = np.empty((N + 1, n, n))
    W1 = np.empty((N, m, m))
    W2 = np.empty((N, m, m))
    H1 = np.empty((N, m, n))
    H2 = np.empty((N, m, n))
    L = np.empty((N, m, n))
    M = np.empty((N, m, n))

    S[N] = spec.G_N
    T[N] = spec.G_N + spec.Gbar_N
    for k in range(N - 1, -1, -1):
        A, B, C, D = spec.A[k], spec.B[k], spec.C[k], spec.D[k]
        At, Bt, Ct, Dt = spec.A_mean[k], spec.B_mean[k], spec.C_mean[k], spec.D_mean[k]
        Sn, Tn = S[k + 1], T[k + 1]

        W1[k] = _sym(spec.R[k] + B.T @ Sn @ B + D.T @ Sn @ D)
        H1[k] = B.T @ Sn @ A + D.T @ Sn @ C
        W2[k] = _sym(spec.R[k] + spec.Rbar[k] + Bt.T @ Tn @ Bt + Dt.T @ Sn @ Dt)
        H2[k] = Bt.T @ Tn @ At + Dt.T @ Sn @ Ct

        L[k] = -spd_solve(W1[k], H1[k], k, "W1")
        M[k] = -spd_solve(W2[k], H2[k], k, "W2")

        # H' W^-1 H == -H' L
        S[k] = _sym(spec.Q[k] + A.T @ Sn @ A + C.T @ Sn @ C + H1[k].T @ L[k])
        T[k] = _sym(spec.Q[k] + spec.Qbar[k] + Ct.T @ Sn @ Ct + At.T @ Tn @ At + H2[k].T @ M[k])

    return RiccatiSolution(S, T, W1, W2, H1, H2, L, M)


def optimal_policy(sol: RiccatiSolution) -> FeedbackPolicy:
    return FeedbackPolicy(np.array(sol.L), np.array(sol.M))


def solve_principle(spec: ProblemSpec, sol: RiccatiSolution | None = None) -> PrincipleSolution:
    """Run the minimum-principle recursion for ``P`` and ``Pbar``.

    With ``sol`` given, its gains are used (``Lbar = M - L``). Without it the
    gains are formed from ``P``, ``Pbar`` themselves::

        W1 = R + B' P B + D' P D,   H1 = B' P A + D' P C
        W2 = R + Rbar + B~' (P + Pbar) B~ + D~' P D~
        H2 = B~' (P + Pbar) A~ + D~' P C~
        L = -W1^-1 H1,   Lbar = -W2^-1 H2 + W1^-1 H1

    so the whole computation is independent of :func:`solve_riccati`.
    """
    N, n, m = spec.N, spec.n, spec.m
    P = np.empty((N + 1, n, n))
    Pbar = np.empty((N + 1, n, n))
    Lo = np.empty((N, m, n))
    Lbo = np.empty((N, m, n))
    P[N] = spec.G_N
    Pbar[N] = spec.Gbar_N
    for k in range(N - 1, -1, -1):
        A, Ab, B, Bb = spec.A[k], spec.Abar[k], spec.B[k], spec.Bbar[k]
        C, Cb, D, Db = spec.C[k], spec.Cbar[k], spec.D[k], spec.Dbar[k]
        R, Rb = spec.R[k], spec.Rbar[k]
        Pn, Pbn = P[k + 1], Pbar[k + 1]

        if sol is None:
            At, Bt, Ct, Dt = A + Ab, B + Bb, C + Cb, D + Db
            W1 = _sym(R + B.T @ Pn @ B + D.T @ Pn @ D)
            H1 = B.T @ Pn @ A + D.T @ Pn @ C
            W2 = _sym(R + Rb + Bt.T @ (Pn + Pbn) @ Bt + Dt.T @ Pn @ Dt)
            H2 = Bt.T @ (Pn + Pbn) @ At + Dt.T @ Pn @ Ct
            Lk = -spd_solve(W1, H1, k, "W1")
            Lbk = -spd_solve(W2, H2, k, "W2") - Lk
        else:
            Lk = sol.L[k]
            Lbk = sol.M[k] - sol.L[k]
        Lo[k], Lbo[k] = Lk, Lbk

        Ls = Lk + Lbk
        Acl = A + B @ Lk
        Ccl = C + D @ Lk
        Am = Ab + B @ Lbk + Bb @ Ls
        Cm = Cb + D @ Lbk + Db @ Ls
        Amean = A + Ab + (B + Bb) @ Ls

        P[k] = _sym(spec.Q[k] + Lk.T @ R @ Lk + Acl.T @ Pn @ Acl + Ccl.T @ Pn @ Ccl)
        Pbar[k] = _sym(
            spec.Qbar[k]
            + Lk.T @ R @ Lbk + Lbk.T @ R @ Lk + Lbk.T @ R @ Lbk
            + Ls.T @ Rb @ Ls
            + Acl.T @ Pn @ Am + Am.T @ Pn @ Acl + Am.T @ Pn @ Am
            + Ccl.T @ Pn @ Cm + Cm.T @ Pn @ Ccl + Cm.T @ Pn @ Cm
            + Amean.T @ Pbn @ Amean
        )
    return PrincipleSolution(P, Pbar, Lo, Lbo)


def equivalence_residuals(sol: RiccatiSolution, ps: PrincipleSolution) -> dict:
    """Max-entry gaps ``max_k |P_k - S_k|`` and ``max_k |P_k + Pbar_k - T_k|``."""
    return {
        "P_minus_S": float(np.max(np.abs(ps.P - sol.S))),
        "P_plus_Pbar_minus_T": float(np.max(np.abs(ps.P + ps.Pbar - sol.T))),
    }


def gain_residuals(sol: RiccatiSolution) -> dict:
    """Max-entry residuals of ``W1 L + H1 = 0`` and ``W2 M + H2 = 0``."""
    r1 = np.einsum("kij,kjl->kil", sol.W1, sol.L) + sol.H1
    r2 = np.einsum("kij,kjl->kil", sol.W2, sol.M) + sol.H2
    return {"W1L_plus_H1": float(np.max(np.abs(r1))), "W2M_plus_H2": float(np.max(np.abs(r2)))}
