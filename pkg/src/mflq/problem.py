"""Problem data for finite-horizon mean-field stochastic LQ control.

The controlled system is::

    x[k+1] = A x + Abar E[x] + B u + Bbar E[u]
             + (C x + Cbar E[x] + D u + Dbar E[u]) w[k]

with quadratic cost in (x, E[x], u, E[u]) plus a terminal cost in (x[N], E[x[N]]).
All coefficient sequences are stored per stage with a leading axis of length N.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

#: Field name -> (row dim, col dim) expressed with the symbols "n" / "m".
STAGE_FIELDS = {
    "A": ("n", "n"), "Abar": ("n", "n"),
    "B": ("n", "m"), "Bbar": ("n", "m"),
    "C": ("n", "n"), "Cbar": ("n", "n"),
    "D": ("n", "m"), "Dbar": ("n", "m"),
    "Q": ("n", "n"), "Qbar": ("n", "n"),
    "R": ("m", "m"), "Rbar": ("m", "m"),
}
TERMINAL_FIELDS = ("G_N", "Gbar_N")
SYMMETRIC_FIELDS = ("Q", "Qbar", "R", "Rbar", "G_N", "Gbar_N")

PSD_TOL = 1e-10
PD_TOL = 1e-12
ASYMMETRY_WARN = 1e-9


class ProblemError(ValueError):
    """Structurally malformed problem data (shapes, missing fields or stages)."""


class ParseError(ProblemError):
    """A problem document could not be decoded; ``path`` locates the offence."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _symmetrize(M: np.ndarray, name: str) -> np.ndarray:
    asym = np.max(np.abs(M - np.swapaxes(M, -1, -2))) if M.size else 0.0
    if asym > ASYMMETRY_WARN:
        logger.warning("%s is not symmetric (max |M - M^T| = %.3e); symmetrizing", name, asym)
    return 0.5 * (M + np.swapaxes(M, -1, -2))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Coefficients of a mean-field LQ problem over ``N`` stages.

    Stage sequences may be given as a single 2-D matrix, which is broadcast
    to every stage, or as a sequence of ``N`` matrices. Weight matrices are
    replaced by their symmetric part on construction. Instances are
    immutable: all stored arrays are read-only.
    """

    n: int
    m: int
    N: int
    A: Any
    Abar: Any
    B: Any
    Bbar: Any
    C: Any
    Cbar: Any
    D: Any
    Dbar: Any
    Q: Any
    Qbar: Any
    R: Any
    Rbar: Any
    G_N: Any
    Gbar_N: Any

    def __post_init__(self):
        for name in ("n", "m", "N"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ProblemError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        dims = {"n": self.n, "m": self.m}
        for name, (r, c) in STAGE_FIELDS.items():
            shape = (dims[r], dims[c])
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim == 2:
                arr = np.broadcast_to(arr, (self.N,) + arr.shape).copy()
            if arr.ndim != 3:
                raise ProblemError(f"{name}: expected a matrix or a sequence of matrices")
            if arr.shape[0] != self.N:
                if arr.shape[0] < self.N:
                    raise ProblemError(f"{name}: missing stage k={arr.shape[0]} (N={self.N})")
                raise ProblemError(f"{name}: has {arr.shape[0]} stages, expected N={self.N}")
            if arr.shape[1:] != shape:
                raise ProblemError(
                    f"{name}: stage shape {arr.shape[1:]} does not match {r}x{c} = {shape}")
            if not np.all(np.isfinite(arr)):
                bad = int(np.argwhere(~np.isfinite(arr))[0, 0])
                raise ProblemError(f"{name}[{bad}]: non-finite entry")
            if name in SYMMETRIC_FIELDS:
                arr = _symmetrize(arr, name)
            object.__setattr__(self, name, _readonly(arr))
        for name in TERMINAL_FIELDS:
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (self.n, self.n):
                raise ProblemError(f"{name}: shape {arr.shape} does not match n x n = {(self.n, self.n)}")
            if not np.all(np.isfinite(arr)):
                raise ProblemError(f"{name}: non-finite entry")
            object.__setattr__(self, name, _readonly(_symmetrize(arr, name)))

    # Combined ("mean part") coefficients used throughout the recursions.
    @property
    def A_mean(self) -> np.ndarray:
        return self.A + self.Abar

    @property
    def B_mean(self) -> np.ndarray:
        return self.B + self.Bbar

    @property
    def C_mean(self) -> np.ndarray:
        return self.C + self.Cbar

    @property
    def D_mean(self) -> np.ndarray:
        return self.D + self.Dbar

    def matrices(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in (*STAGE_FIELDS, *TERMINAL_FIELDS)}

    def replace(self, **changes) -> "ProblemSpec":
        kw = {"n": self.n, "m": self.m, "N": self.N, **self.matrices()}
        kw.update(changes)
        return ProblemSpec(**kw)

    def without_mean_field(self) -> "ProblemSpec":
        """Copy with every barred coefficient set to zero (classical stochastic LQ)."""
        zero = {name: np.zeros_like(getattr(self, name))
                for name in ("Abar", "Bbar", "Cbar", "Dbar", "Qbar", "Rbar", "Gbar_N")}
        return self.replace(**zero)

    def __eq__(self, other):
        if not isinstance(other, ProblemSpec):
            return NotImplemented
        if (self.n, self.m, self.N) != (other.n, other.m, other.N):
            return False
        return all(np.array_equal(a, b) for a, b in
                   zip(self.matrices().values(), other.matrices().values()))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Law of the initial state.

    Use the constructors :meth:`deterministic`, :meth:`gaussian` and
    :meth:`finite_support`.
    """

    kind: str
    mean: np.ndarray
    cov: np.ndarray = field(default=None)
    points: np.ndarray = field(default=None)
    probs: np.ndarray = field(default=None)

    @classmethod
    def deterministic(cls, zeta) -> "InitialCondition":
        z = np.array(zeta, dtype=float).reshape(-1)
        return cls("deterministic", _readonly(z),
                   cov=_readonly(np.zeros((z.size, z.size))))

    @classmethod
    def gaussian(cls, mean, cov) -> "InitialCondition":
        mu = np.array(mean, dtype=float).reshape(-1)
        S = np.array(cov, dtype=float)
        if S.shape != (mu.size, mu.size):
            raise ProblemError(f"gaussian covariance shape {S.shape} does not match mean size {mu.size}")
        S = _symmetrize(S, "initial.cov")
        if np.linalg.eigvalsh(S).min() < -PSD_TOL:
            raise ProblemError("initial.cov is not positive semidefinite")
        return cls("gaussian", _readonly(mu), cov=_readonly(S))

    @classmethod
    def finite_support(cls, points, probs) -> "InitialCondition":
        P = np.atleast_2d(np.array(points, dtype=float))
        p = np.array(probs, dtype=float).reshape(-1)
        if P.shape[0] != p.size:
            raise ProblemError(f"finite_support: {P.shape[0]} points but {p.size} probabilities")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ProblemError("finite_support: probabilities must be nonnegative and sum to 1")
        mu = p @ P
        dev = P - mu
        cov = (dev * p[:, None]).T @ dev
        return cls("finite_support", _readonly(mu), cov=_readonly(0.5 * (cov + cov.T)),
                   points=_readonly(P), probs=_readonly(p))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def covariance(self) -> np.ndarray:
        return self.cov

    @property
    def second_moment(self) -> np.ndarray:
        """E[zeta zeta^T]."""
        return self.cov + np.outer(self.mean, self.mean)

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Support points and probabilities; unavailable for Gaussian laws."""
        if self.kind == "deterministic":
            return self.mean[None, :].copy(), np.ones(1)
        if self.kind == "finite_support":
            return np.array(self.points), np.array(self.probs)
        raise ProblemError("a gaussian initial condition has no finite support")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "deterministic":
            return np.broadcast_to(self.mean, (size, self.dim)).copy()
        if self.kind == "gaussian":
            w, V = np.linalg.eigh(self.cov)
            root = V * np.sqrt(np.clip(w, 0.0, None))
            return self.mean + rng.standard_normal((size, self.dim)) @ root.T
        idx = rng.choice(self.probs.size, size=size, p=self.probs)
        return np.array(self.points)[idx]

    def to_dict(self) -> dict:
        if self.kind == "deterministic":
            return {"kind": "deterministic", "zeta": self.mean.tolist()}
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}
        return {"kind": "finite_support", "points": self.points.tolist(),
                "probs": self.probs.tolist()}


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """Linear feedback ``u = M E[x] + L (x - E[x])`` per stage.

    ``L`` and ``M`` have shape ``(N, m, n)``. The equivalent form
    ``u = L x + Lbar E[x]`` has ``Lbar = M - L``.
    """

    L: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        M = np.array(self.M, dtype=float)
        if L.ndim != 3 or L.shape != M.shape:
            raise ProblemError(f"policy gains must both have shape (N, m, n); got {L.shape} and {M.shape}")
        object.__setattr__(self, "L", _readonly(L))
        object.__setattr__(self, "M", _readonly(M))

    @classmethod
    def from_state_and_mean_gains(cls, L, Lbar) -> "FeedbackPolicy":
        """Build from the ``u = L x + Lbar E[x]`` parametrisation."""
        L = np.asarray(L, dtype=float)
        return cls(L, L + np.asarray(Lbar, dtype=float))

    @classmethod
    def zeros(cls, N: int, m: int, n: int) -> "FeedbackPolicy":
        return cls(np.zeros((N, m, n)), np.zeros((N, m, n)))

    @property
    def Lbar(self) -> np.ndarray:
        return self.M - self.L

    @property
    def N(self) -> int:
        return self.L.shape[0]

    def check(self, spec: ProblemSpec) -> None:
        if self.L.shape != (spec.N, spec.m, spec.n):
            raise ProblemError(
                f"policy gains have shape {self.L.shape}, expected (N, m, n) = {(spec.N, spec.m, spec.n)}")


@dataclass(frozen=True)
class MatrixCheck:
    name: str
    stage: int | None
    requirement: str  # "psd" or "pd"
    min_eig: float
    asymmetry: float
    ok: bool

    @property
    def label(self) -> str:
        if self.stage is None:
            return self.name
        return "+".join(f"{part}_{self.stage}" for part in self.name.split("+"))


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[MatrixCheck, ...]

    @property
    def satisfied(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def violations(self) -> list[str]:
        words = {"psd": "not PSD", "pd": "not positive definite"}
        return [f"{c.label} {words[c.requirement]} (min eigenvalue {c.min_eig:.3e})"
                for c in self.checks if not c.ok]

    @property
    def verdict(self) -> str:
        return "standard-condition " + ("satisfied" if self.satisfied else "violated")

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "satisfied": self.satisfied,
            "violations": self.violations,
            "checks": [
                {"matrix": c.label, "requirement": c.requirement, "min_eig": c.min_eig,
                 "asymmetry": c.asymmetry, "ok": c.ok}
                for c in self.checks
            ],
        }


class ValidationError(ProblemError):
    """The standard solvability condition does not hold."""

    def __init__(self, report: ValidationReport):
        super().__init__("; ".join(report.violations))
        self.report = report


def _check(name, stage, M, requirement) -> MatrixCheck:
    lam = float(np.linalg.eigvalsh(M).min())
    asym = float(np.max(np.abs(M - M.T)))
    ok = lam >= (-PSD_TOL if requirement == "psd" else PD_TOL)
    return MatrixCheck(name, stage, requirement, lam, asym, ok)


def validate(spec: ProblemSpec) -> ValidationReport:
    """Check the standard condition stage by stage.

    Requires Q, Q+Qbar >= 0 and R, R+Rbar > 0 at every stage, and
    G_N, G_N+Gbar_N >= 0. PSD means a minimum eigenvalue of at least
    -1e-10; PD means at least 1e-12.
    """
    checks = []
    for k in range(spec.N):
        checks.append(_check("Q", k, spec.Q[k], "psd"))
        checks.append(_check("Q+Qbar", k, spec.Q[k] + spec.Qbar[k], "psd"))
        checks.append(_check("R", k, spec.R[k], "pd"))
        checks.append(_check("R+Rbar", k, spec.R[k] + spec.Rbar[k], "pd"))
    checks.append(_check("G_N", None, spec.G_N, "psd"))
    checks.append(_check("G_N+Gbar_N", None, spec.G_N + spec.Gbar_N, "psd"))
    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# JSON documents

def _matrix(value, path: str, shape: tuple[int, int]) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError("not a numeric matrix", path) from None
    if arr.shape != shape:
        raise ParseError(f"expected a {shape[0]}x{shape[1]} matrix, got shape {arr.shape}", path)
    return arr


def _depth(value) -> int:
    d = 0
    while isinstance(value, list):
        d += 1
        if not value:
            break
        value = value[0]
    return d


def _stage_sequence(doc, name, N, shape) -> np.ndarray:
    if name not in doc:
        raise ParseError(f"missing field {name}")
    value = doc[name]
    path = f"$.{name}"
    if not isinstance(value, list):
        raise ParseError("expected an array", path)
    if _depth(value) == 2:
        return _matrix(value, path, shape)
    if len(value) < N:
        raise ParseError(f"missing stage k={len(value)} (N={N})", path)
    if len(value) > N:
        raise ParseError(f"has {len(value)} stages, expected N={N}", path)
    return np.stack([_matrix(v, f"{path}[{k}]", shape) for k, v in enumerate(value)])


def _positive_int(doc, name) -> int:
    if name not in doc:
        raise ParseError(f"missing field {name}")
    v = doc[name]
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ParseError("must be a positive integer", f"$.{name}")
    return v


def _initial(doc, n) -> InitialCondition:
    if "initial" not in doc:
        raise ParseError("missing field initial")
    ini = doc["initial"]
    if not isinstance(ini, dict):
        raise ParseError("expected an object", "$.initial")
    kind = ini.get("kind")

    def vec(key):
        if key not in ini:
            raise ParseError(f"missing field {key}", "$.initial")
        try:
            v = np.array(ini[key], dtype=float)
        except (TypeError, ValueError):
            raise ParseError("not a numeric vector", f"$.initial.{key}") from None
        if v.shape != (n,):
            raise ParseError(f"expected a vector of length n={n}", f"$.initial.{key}")
        return v

    try:
        if kind == "deterministic":
            return InitialCondition.deterministic(vec("zeta"))
        if kind == "gaussian":
            if "cov" not in ini:
                raise ParseError("missing field cov", "$.initial")
            return InitialCondition.gaussian(vec("mean"), _matrix(ini["cov"], "$.initial.cov", (n, n)))
        if kind == "finite_support":
            if "points" not in ini or "probs" not in ini:
                raise ParseError("finite_support needs points and probs", "$.initial")
            pts = [_vector_at(p, f"$.initial.points[{i}]", n) for i, p in enumerate(ini["points"])]
            return InitialCondition.finite_support(np.array(pts).reshape(-1, n), ini["probs"])
    except ParseError:
        raise
    except ProblemError as exc:
        raise ParseError(str(exc), "$.initial") from None
    raise ParseError(f"unknown kind {kind!r}", "$.initial.kind")


def _vector_at(value, path, n):
    try:
        v = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ParseError("not a numeric vector", path) from None
    if v.shape != (n,):
        raise ParseError(f"expected a vector of length n={n}", path)
    return v


def problem_from_dict(doc: dict) -> tuple[ProblemSpec, InitialCondition]:
    if not isinstance(doc, dict):
        raise ParseError("expected a JSON object")
    n, m, N = (_positive_int(doc, k) for k in ("n", "m", "N"))
    dims = {"n": n, "m": m}
    mats = {name: _stage_sequence(doc, name, N, (dims[r], dims[c]))
            for name, (r, c) in STAGE_FIELDS.items()}
    for name in TERMINAL_FIELDS:
        if name not in doc:
            raise ParseError(f"missing field {name}")
        mats[name] = _matrix(doc[name], f"$.{name}", (n, n))
    return ProblemSpec(n=n, m=m, N=N, **mats), _initial(doc, n)


def load_problem(text: str) -> tuple[ProblemSpec, InitialCondition]:
    """Parse a JSON problem document into a spec and its initial condition."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    return problem_from_dict(doc)


def problem_to_dict(spec: ProblemSpec, init: InitialCondition | None = None) -> dict:
    doc: dict[str, Any] = {"n": spec.n, "m": spec.m, "N": spec.N}
    for name in STAGE_FIELDS:
        arr = getattr(spec, name)
        # Constant sequences are written in broadcast form.
        doc[name] = arr[0].tolist() if np.all(arr == arr[0]) else arr.tolist()
    for name in TERMINAL_FIELDS:
        doc[name] = getattr(spec, name).tolist()
    if init is not None:
        doc["initial"] = init.to_dict()
    return doc


def dump_problem(spec: ProblemSpec, init: InitialCondition | None = None, indent: int | None = 2) -> str:
    return json.dumps(problem_to_dict(spec, init), indent=indent)

