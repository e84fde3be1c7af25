"""Command-line entry point.

Exit status: 0 success, 1 standard condition violated, 2 numerical failure
(factorisation, capacity, failed verification), 3 I/O or parse error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import benchmark
from .moments import optimal_value, propagate
from .oracle import CapacityError, verify
from .problem import (InitialCondition, ProblemError, ValidationError, dump_problem,
                      load_problem, validate)
from .riccati import (equivalence_residuals, optimal_policy, solve_principle,
                      solve_riccati)
from .simulate import NoiseModel, particle_convergence, simulate

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
VERIFY_TOL = 1e-6


class CliError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


class _Parser(argparse.ArgumentParser):
    # Usage errors share the parse-error status instead of argparse's 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def _counts(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("counts must be positive")
    return values


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", "-i", default="-", help="problem document (default: stdin)")
    common.add_argument("--output", "-o", default="-", help="output file (default: stdout)")
    common.add_argument("--format", "-f", choices=("json", "csv", "table"), default="json")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--paths", type=_positive, default=10_000)
    common.add_argument("--particles", type=_counts, default=[1000],
                        help="particle count(s), comma separated")
    common.add_argument("--replications", type=_positive, default=20)
    common.add_argument("--noise", choices=[m.value for m in NoiseModel], default=None)
    common.add_argument("--zeta", type=_vector, default=None, help="deterministic initial state x,y,z")
    common.add_argument("--principle", action="store_true", help="also run the P/Pbar recursion")
    common.add_argument("--trace", action="store_true", help="also emit the optimal moment trajectory")

    parser = _Parser(prog="mflq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check the standard condition")
    sub.add_parser("solve", parents=[common], help="Riccati gains and optimal value")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo cost of the optimal policy")
    sub.add_parser("verify", parents=[common], help="compare with the scenario-tree oracle")
    sub.add_parser("particles", parents=[common], help="interacting-particle deviation report")
    ex = sub.add_parser("example", parents=[common], help="write the built-in benchmark document")
    ex.add_argument("--raw-terminal", action="store_true",
                    help="store the listed terminal mean weight literally")
    return parser


def _read(path: str) -> str:
    try:
        if path == "-":
            return sys.stdin.read()
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}", EXIT_IO) from None


def _load(args):
    try:
        spec, init = load_problem(_read(args.input))
    except ProblemError as exc:
        raise CliError(f"parse error: {exc}", EXIT_IO) from None
    if args.zeta is not None:
        if len(args.zeta) != spec.n:
            raise CliError(f"--zeta has {len(args.zeta)} entries, expected n={spec.n}", EXIT_IO)
        init = InitialCondition.deterministic(args.zeta)
    return spec, init


def _fmt_matrix(name: str, M: np.ndarray) -> list[str]:
    lines = [f"{name} ="]
    for row in np.atleast_2d(M):
        lines.append("  " + "  ".join(f"{v:9.4f}" for v in row))
    return lines


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _gain_rows(sol):
    rows = []
    for k in range(sol.N):
        for name, G in (("M", sol.M[k]), ("L", sol.L[k])):
            for i, row in enumerate(G):
                rows.append([k, name, i, *row])
    return rows


def cmd_validate(args) -> tuple[str, int]:
    spec, _ = _load(args)
    report = validate(spec)
    status = EXIT_OK if report.satisfied else EXIT_INVALID
    if args.format == "json":
        return json.dumps(report.to_dict(), indent=2), status
    if args.format == "csv":
        rows = [[c.label, c.requirement, c.min_eig, c.asymmetry, c.ok] for c in report.checks]
        return _csv(rows, ["matrix", "requirement", "min_eig", "asymmetry", "ok"]), status
    lines = [f"{c.label:>12}  {c.requirement:>3}  min eig {c.min_eig:10.4f}  {'ok' if c.ok else 'FAIL'}"
             for c in report.checks]
    lines += [f"verdict: {report.verdict}", *report.violations]
    return "\n".join(lines), status


def cmd_solve(args) -> tuple[str, int]:
    spec, init = _load(args)
    sol = solve_riccati(spec)
    doc = {"solution": sol.to_dict(), "optimal_value": optimal_value(sol, init)}
    if args.principle:
        ps = solve_principle(spec)
        doc["principle"] = {**ps.to_dict(), "residuals": equivalence_residuals(sol, ps)}
    traj = propagate(spec, optimal_policy(sol), init) if args.trace else None
    if traj is not None:
        doc["trace"] = {"mean": traj.mean.tolist(), "X": traj.X.tolist(), "Xbar": traj.Xbar.tolist(),
                        "stage_cost": traj.stage_cost.tolist(), "cost": traj.cost}

    if args.format == "json":
        return json.dumps(doc, indent=2), EXIT_OK
    if args.format == "csv":
        n = spec.n
        out = _csv(_gain_rows(sol), ["k", "gain", "row", *[f"c{j}" for j in range(n)]])
        if traj is not None:
            ctg = traj.cost_to_go()
            rows = [[k, *traj.mean[k], *np.diag(traj.X[k]), traj.stage_cost[k], ctg[k]]
                    for k in range(spec.N + 1)]
            header = ["k", *[f"mean{j}" for j in range(n)], *[f"X{j}{j}" for j in range(n)],
                      "stage_cost", "cost_to_go"]
            out += "\n" + _csv(rows, header)
        return out, EXIT_OK
    lines = []
    for k in range(spec.N + 1):
        lines += _fmt_matrix(f"S_{k}", sol.S[k]) + _fmt_matrix(f"T_{k}", sol.T[k])
    for k in range(spec.N):
        lines += _fmt_matrix(f"M_{k}", sol.M[k]) + _fmt_matrix(f"L_{k}", sol.L[k])
    lines.append(f"optimal value = {doc['optimal_value']:.4f}")
    if args.principle:
        r = doc["principle"]["residuals"]
        lines.append(f"max|P - S| = {r['P_minus_S']:.3e}, max|P + Pbar - T| = {r['P_plus_Pbar_minus_T']:.3e}")
    if traj is not None:
        lines.append("k  mean  diag(X)  stage cost")
        for k in range(spec.N + 1):
            lines.append(f"{k}  " + " ".join(f"{v:.4f}" for v in traj.mean[k]) + "  "
                         + " ".join(f"{v:.4f}" for v in np.diag(traj.X[k]))
                         + f"  {traj.stage_cost[k]:.4f}")
    return "\n".join(lines), EXIT_OK


def cmd_simulate(args) -> tuple[str, int]:
    spec, init = _load(args)
    sol = solve_riccati(spec)
    noise = NoiseModel(args.noise or NoiseModel.STANDARD_NORMAL.value)
    res = simulate(spec, optimal_policy(sol), init, noise, args.paths, args.seed)
    doc = {**res.to_dict(), "exact_cost": optimal_value(sol, init)}
    if args.format == "json":
        doc["state_mean"] = res.state_mean.tolist()
        doc["state_stderr"] = res.state_stderr.tolist()
        return json.dumps(doc, indent=2), EXIT_OK
    if args.format == "csv":
        return _csv(res.confidence_rows(), ["k", "coord", "mean", "lower", "upper"]), EXIT_OK
    return (f"cost = {res.cost_mean:.4f} +/- {res.cost_stderr:.4f} "
            f"(exact {doc['exact_cost']:.4f}, {res.n_paths} paths, seed {res.seed})"), EXIT_OK


def cmd_verify(args) -> tuple[str, int]:
    spec, init = _load(args)
    if init.kind == "gaussian":
        raise CliError("verify needs a deterministic or finite-support initial state (use --zeta)", EXIT_IO)
    rep = verify(spec, init)
    status = EXIT_OK if rep["rel_diff"] <= VERIFY_TOL else EXIT_NUMERIC
    if args.format == "json":
        return json.dumps(rep, indent=2), status
    if args.format == "csv":
        return _csv([[k, v] for k, v in rep.items()], ["quantity", "value"]), status
    return "\n".join(f"{k:>28}  {v:.4e}" for k, v in rep.items()), status


def cmd_particles(args) -> tuple[str, int]:
    spec, init = _load(args)
    pol = optimal_policy(solve_riccati(spec))
    noise = NoiseModel(args.noise or NoiseModel.STANDARD_NORMAL.value)
    rep = particle_convergence(spec, pol, init, args.particles, args.replications, noise, args.seed)
    if args.format == "json":
        return json.dumps(rep, indent=2), EXIT_OK
    if args.format == "csv":
        rows = list(zip(rep["counts"], rep["median_deviation"]))
        return _csv(rows, ["particles", "median_deviation"]), EXIT_OK
    lines = [f"{L:>8}  {d:.4e}" for L, d in zip(rep["counts"], rep["median_deviation"])]
    return "\n".join(lines), EXIT_OK


def cmd_example(args) -> tuple[str, int]:
    spec = benchmark.benchmark_problem(centred_terminal=not args.raw_terminal)
    return dump_problem(spec, benchmark.benchmark_initial()), EXIT_OK


COMMANDS = {
    "validate": cmd_validate, "solve": cmd_solve, "simulate": cmd_simulate,
    "verify": cmd_verify, "particles": cmd_particles, "example": cmd_example,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text, status = COMMANDS[args.command](args)
    except CliError as exc:
        print(f"mflq: {exc}", file=sys.stderr)
        return exc.status
    except ValidationError as exc:
        print(f"mflq: standard condition violated: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ArithmeticError, CapacityError) as exc:
        print(f"mflq: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ProblemError as exc:
        print(f"mflq: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        if args.output == "-":
            sys.stdout.write(text.rstrip("\n") + "\n")
        else:
            with open(args.output, "w", encoding="utf-8") as fh:
                fh.write(text.rstrip("\n") + "\n")
    except OSError as exc:
        print(f"mflq: cannot write {args.output}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    return status


def main() -> None:
    sys.exit(run())
