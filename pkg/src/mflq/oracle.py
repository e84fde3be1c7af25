"""Exact open-loop certification on Rademacher scenario trees.

With ``w_k`` uniform on ``{-1, +1}`` every expectation is a finite sum over
the ``2^k`` noise histories at depth ``k``. An adapted control assigns one
vector ``u`` in R^m to every node of depth ``< N``; the state at each node is
then an affine function of the stacked controls, so the cost is exactly

    J(u) = u' Theta1 u + 2 theta2' u + theta3.

Minimising this quadratic over all adapted controls gives the open-loop
optimum with no reference to Riccati equations. A random initial state with
finite support becomes a forest of trees (one root per atom) whose
expectations are probability-weighted across the whole forest.

Node ``j`` at depth ``k`` has children ``2j`` (``w_k = -1``) and ``2j + 1``
(``w_k = +1``); roots are the atoms. Control ``i`` of node ``j`` at depth
``k`` is entry ``m * (a * (2**k - 1) + j) + i`` of the stacked vector, with
``a`` the number of atoms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigvalsh

from .problem import FeedbackPolicy, InitialCondition, ProblemError, ProblemSpec

MAX_HORIZON = 14
MAX_BYTES = 2 * 1024**3


class CapacityError(ValueError):
    """The scenario tree would be too large to assemble densely."""


class OracleError(ArithmeticError):
    """Theta1 is not positive definite, so the minimiser is not unique."""


def _as_atoms(zeta) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(zeta, InitialCondition):
        return zeta.atoms()
    z = np.asarray(zeta, dtype=float).reshape(1, -1)
    return z, np.ones(1)


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Index bookkeeping for a forest of binary noise trees."""

    N: int
    m: int
    points: np.ndarray
    probs: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.probs.size

    def n_nodes(self, k: int) -> int:
        return self.n_atoms << k

    @property
    def total_nodes(self) -> int:
        return sum(self.n_nodes(k) for k in range(self.N + 1))

    def node_probs(self, k: int) -> np.ndarray:
        return np.repeat(self.probs, 1 << k) / (1 << k)

    def control_offset(self, k: int) -> int:
        return self.m * self.n_atoms * ((1 << k) - 1)

    @property
    def n_controls(self) -> int:
        return self.control_offset(self.N)

    def controls_at(self, u: np.ndarray, k: int) -> np.ndarray:
        """View of the stacked vector ``u`` as ``(nodes, m)`` at depth ``k``."""
        off = self.control_offset(k)
        return u[off:off + self.n_nodes(k) * self.m].reshape(-1, self.m)

    def history(self, k: int, j: int) -> tuple[int, tuple[int, ...]]:
        """Atom index and noise signs ``(w_0, ..., w_{k-1})`` of node ``j``."""
        signs = tuple(1 if (j >> (k - 1 - i)) & 1 else -1 for i in range(k))
        return j >> k, signs


def make_tree(spec: ProblemSpec, zeta) -> ScenarioTree:
    points, probs = _as_atoms(zeta)
    if points.shape[1] != spec.n:
        raise ProblemError(f"initial state has dimension {points.shape[1]}, expected n={spec.n}")
    if spec.N > MAX_HORIZON:
        raise CapacityError(f"horizon N={spec.N} exceeds the scenario-tree limit {MAX_HORIZON}; "
                            "use a smaller horizon")
    tree = ScenarioTree(spec.N, spec.m, points, probs)
    V = tree.n_controls + 1
    need = 8 * (2 * tree.n_nodes(spec.N) * spec.n * V + 2 * V * V)
    if need > MAX_BYTES:
        raise CapacityError(f"dense assembly needs about {need / 2**30:.1f} GiB "
                            f"({tree.n_controls} control variables); use a smaller horizon")
    return tree


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """``J(u) = u' Theta1 u + 2 theta2' u + theta3`` over stacked node controls."""

    Theta1: np.ndarray
    theta2: np.ndarray
    theta3: float
    tree: ScenarioTree

    def __call__(self, u: np.ndarray) -> float:
        return float(u @ self.Theta1 @ u + 2.0 * self.theta2 @ u + self.theta3)

    def min_eig(self) -> float:
        return float(eigvalsh(self.Theta1)[0]) if self.Theta1.size else math.inf


class OpenLoopSolution(NamedTuple):
    u: np.ndarray
    cost: float
    residual: float


def assemble(spec: ProblemSpec, zeta) -> QuadraticForm:
    """Build ``(Theta1, theta2, theta3)`` by forward sensitivity propagation.

    Each node state is stored as an ``n x (n_controls + 1)`` matrix: its
    derivative with respect to every stacked control plus a final constant
    column carrying the contribution of the initial state.
    """
    tree = make_tree(spec, zeta)
    n, m, N = spec.n, spec.m, spec.N
    nu = tree.n_controls
    V = nu + 1
    K = np.zeros((V, V))

    Xs = np.zeros((tree.n_atoms, n, V))
    Xs[:, :, -1] = tree.points

    def add_state_cost(Xs, p, Wx, Wmean):
        Y = Xs * np.sqrt(p)[:, None, None]
        WY = np.einsum("ab,jbv->jav", Wx, Y)
        K[...] += Y.reshape(-1, V).T @ WY.reshape(-1, V)
        Ex = np.einsum("j,jnv->nv", p, Xs)
        K[...] += Ex.T @ Wmean @ Ex
        return Ex

    for k in range(N):
        p = tree.node_probs(k)
        nodes = p.size
        off = tree.control_offset(k)
        Ex = add_state_cost(Xs, p, spec.Q[k], spec.Qbar[k])

        Eu = np.zeros((m, V))
        Eu[:, off:off + nodes * m] = np.kron(p[None, :], np.eye(m))
        for j in range(nodes):
            s = slice(off + j * m, off + (j + 1) * m)
            K[s, s] += p[j] * spec.R[k]
        K += Eu.T @ spec.Rbar[k] @ Eu

        drift = np.einsum("ab,jbv->jav", spec.A[k], Xs)
        drift += (spec.Abar[k] @ Ex + spec.Bbar[k] @ Eu)[None]
        diff = np.einsum("ab,jbv->jav", spec.C[k], Xs)
        diff += (spec.Cbar[k] @ Ex + spec.Dbar[k] @ Eu)[None]
        for j in range(nodes):
            s = slice(off + j * m, off + (j + 1) * m)
            drift[j, :, s] += spec.B[k]
            diff[j, :, s] += spec.D[k]

        Xs = np.empty((2 * nodes, n, V))
        Xs[0::2] = drift - diff
        Xs[1::2] = drift + diff

    add_state_cost(Xs, tree.node_probs(N), spec.G_N, spec.Gbar_N)
    K = 0.5 * (K + K.T)
    return QuadraticForm(K[:nu, :nu].copy(), K[:nu, nu].copy(), float(K[nu, nu]), tree)


def solve_open_loop(form: QuadraticForm) -> OpenLoopSolution:
    """Minimise the quadratic form: ``Theta1 u = -theta2``."""
    if form.theta2.size == 0:
        return OpenLoopSolution(np.zeros(0), form.theta3, 0.0)
    try:
        factor = cho_factor(form.Theta1, lower=True)
    except LinAlgError as exc:
        raise OracleError(f"Theta1 is not positive definite ({exc})") from None
    u = -cho_solve(factor, form.theta2)
    cost = form.theta3 + float(form.theta2 @ u)
    residual = float(np.max(np.abs(form.Theta1 @ u + form.theta2)))
    return OpenLoopSolution(u, cost, residual)


def _advance(spec: ProblemSpec, k: int, p: np.ndarray, x: np.ndarray, uk: np.ndarray):
    """Stage-``k`` cost terms and the children's states for node states ``x``."""
    Ex, Eu = p @ x, p @ uk
    terms = [p @ np.einsum("ja,ab,jb->j", x, spec.Q[k], x), Ex @ spec.Qbar[k] @ Ex,
             p @ np.einsum("ja,ab,jb->j", uk, spec.R[k], uk), Eu @ spec.Rbar[k] @ Eu]
    drift = x @ spec.A[k].T + uk @ spec.B[k].T + spec.Abar[k] @ Ex + spec.Bbar[k] @ Eu
    diff = x @ spec.C[k].T + uk @ spec.D[k].T + spec.Cbar[k] @ Ex + spec.Dbar[k] @ Eu
    nxt = np.empty((2 * x.shape[0], spec.n))
    nxt[0::2] = drift - diff
    nxt[1::2] = drift + diff
    return terms, nxt


def _terminal_terms(spec: ProblemSpec, p: np.ndarray, x: np.ndarray) -> list:
    Ex = p @ x
    return [p @ np.einsum("ja,ab,jb->j", x, spec.G_N, x), Ex @ spec.Gbar_N @ Ex]


def tree_trajectory(spec: ProblemSpec, tree: ScenarioTree, u: np.ndarray) -> tuple[list, float]:
    """Play stacked open-loop controls on the tree.

    Returns the node states per depth and the exact expected cost. This is a
    direct forward evaluation that does not use the assembled matrices.
    """
    xs = [np.array(tree.points)]
    terms = []
    for k in range(spec.N):
        t, nxt = _advance(spec, k, tree.node_probs(k), xs[-1], tree.controls_at(u, k))
        terms += t
        xs.append(nxt)
    terms += _terminal_terms(spec, tree.node_probs(spec.N), xs[-1])
    return xs, math.fsum(float(t) for t in terms)


def tree_cost(spec: ProblemSpec, zeta, u: np.ndarray) -> float:
    return tree_trajectory(spec, make_tree(spec, zeta), u)[1]


def policy_controls(spec: ProblemSpec, policy: FeedbackPolicy, zeta) -> tuple[np.ndarray, float]:
    """Stacked node controls generated by a feedback policy, and its exact cost.

    ``E[x_k]`` and ``E[u_k]`` are the probability-weighted sums over all
    depth-``k`` nodes.
    """
    policy.check(spec)
    tree = make_tree(spec, zeta)
    u = np.zeros(tree.n_controls)
    x = np.array(tree.points)
    terms = []
    for k in range(spec.N):
        p = tree.node_probs(k)
        Ex = p @ x
        uk = Ex @ policy.M[k].T + (x - Ex) @ policy.L[k].T
        tree.controls_at(u, k)[...] = uk
        t, x = _advance(spec, k, p, x, uk)
        terms += t
    terms += _terminal_terms(spec, tree.node_probs(spec.N), x)
    return u, math.fsum(float(t) for t in terms)


def eval_policy_on_tree(spec: ProblemSpec, policy: FeedbackPolicy, zeta) -> float:
    """Exact expected cost of a feedback policy over the scenario tree."""
    return policy_controls(spec, policy, zeta)[1]


def feedback_gap(spec: ProblemSpec, policy: FeedbackPolicy, zeta, u: np.ndarray) -> float:
    """Largest node-wise difference between open-loop controls ``u`` and the
    feedback law ``M E[x] + L (x - E[x])`` along the trajectory ``u`` drives."""
    tree = make_tree(spec, zeta)
    xs, _ = tree_trajectory(spec, tree, u)
    gap = 0.0
    for k in range(spec.N):
        p = tree.node_probs(k)
        x = xs[k]
        Ex = p @ x
        fb = Ex @ policy.M[k].T + (x - Ex) @ policy.L[k].T
        gap = max(gap, float(np.max(np.abs(fb - tree.controls_at(u, k)))))
    return gap


def verify(spec: ProblemSpec, zeta) -> dict:
    """Compare the Riccati optimum with the open-loop tree optimum."""
    from .moments import optimal_value
    from .riccati import optimal_policy, solve_riccati

    init = zeta if isinstance(zeta, InitialCondition) else InitialCondition.deterministic(zeta)
    sol = solve_riccati(spec)
    form = assemble(spec, init)
    ol = solve_open_loop(form)
    c_ric = optimal_value(sol, init)
    diff = abs(ol.cost - c_ric)
    return {
        "cost_riccati": c_ric,
        "cost_oracle": ol.cost,
        "abs_diff": diff,
        "rel_diff": diff / max(abs(c_ric), np.finfo(float).tiny),
        "theta1_min_eig": form.min_eig(),
        "per_node_gain_residual_max": feedback_gap(spec, optimal_policy(sol), init, ol.u),
        "n_controls": form.tree.n_controls,
        "solve_residual": ol.residual,
    }
