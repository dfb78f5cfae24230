"""
Command-line front end.

Subcommands::

    solve        one run, error report and per-element diagnostics
    convergence  h-, p- or hp-sweep written as CSV
    verify       residual check and Picard reference comparison
    adapt        minimal adaptive hp driver
    list         registered problems

Exit status is 1 on a solver failure and 2 on an invalid configuration.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics, oracle
from .mesh import Mesh, split_degree_mesh, uniform_mesh
from .problem import REGISTRY, ProblemConfigError, ProblemSpec, load_problem_config, make_problem
from .quadrature import MAX_DEGREE, gauss_legendre
from .solver import (HistoryTerm, PiecewiseLegendreSolution, SolveOptions, SolverError,
                     element_start, solve_element, solve_global)

CSV_HEADER = ("N", "M", "L", "E1", "E2", "E3", "rho", "seconds")


class ConfigError(ValueError):
    """Invalid command-line configuration (exit status 2)."""


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class MeshSpec:
    """One of: uniform (N, M), explicit knots and degrees, or split-degree (N, M_low, M)."""

    N: Optional[int] = None
    M: Optional[int] = None
    knots: Optional[tuple] = None
    degrees: Optional[tuple] = None
    split_low: Optional[int] = None
    align: bool = True

    def build(self, p: ProblemSpec) -> Mesh:
        if self.knots is not None or self.degrees is not None:
            if self.knots is None or self.degrees is None:
                raise ConfigError("--knots and --degrees must be given together")
            knots = np.asarray(self.knots, dtype=float)
            if knots.size and knots[0] != 0.0:
                knots = np.concatenate(([0.0], knots))
            try:
                mesh = Mesh(knots, self.degrees)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        else:
            if self.N is None or self.M is None:
                raise ConfigError("give --N and --M, or --knots and --degrees")
            try:
                if self.split_low is not None:
                    mesh = split_degree_mesh(p.T, self.N, self.split_low, self.M)
                else:
                    mesh = uniform_mesh(p.T, self.N, self.M)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if abs(mesh.T - p.T) > 1e-12 * p.T:
            raise ConfigError(f"mesh ends at {mesh.T} but the problem horizon is T={p.T}")
        if self.align and p.breakpoints:
            mesh = mesh.insert_knots(p.breakpoints)
        return mesh


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemSpec
    mesh: MeshSpec
    options: SolveOptions = field(default_factory=SolveOptions)
    samples_per_element: int = metrics.DEFAULT_SAMPLES
    out: Optional[str] = None


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _load_problem(args) -> ProblemSpec:
    if (args.problem is None) == (args.config is None):
        raise ConfigError("give exactly one of --problem and --config")
    if args.config is not None:
        if args.T is not None or args.r is not None:
            raise ConfigError("--T and --r apply to registry problems only")
        return load_problem_config(args.config)
    cfg = {"problem": args.problem}
    if args.T is not None:
        cfg["T"] = args.T
    if args.r is not None:
        cfg["r"] = args.r
    if args.printed:
        cfg["printed"] = 1
    return make_problem(cfg)


def _options(args) -> SolveOptions:
    try:
        return SolveOptions(tol=args.tol, max_newton=args.max_newton,
                            jacobian=args.jacobian, init=args.init)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_config(args, N=None, M=None) -> RunConfig:
    p = _load_problem(args)
    mesh = MeshSpec(
        N=args.N if N is None else N,
        M=args.M if M is None else M,
        knots=args.knots,
        degrees=args.degrees,
        split_low=args.split_low,
        align=not args.no_align,
    )
    if args.samples_per_element < 2:
        raise ConfigError("--samples-per-element must be at least 2")
    return RunConfig(p, mesh, _options(args), args.samples_per_element, args.out)


# ------------------------------------------------------------------ output

def fmt(x) -> str:
    """Shortest round-trip text for a real; blank for missing values."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(rows: Sequence[Sequence], header: Sequence[str], out: Optional[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    text = buf.getvalue()
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def _reference(p: ProblemSpec, args) -> Optional[Callable]:
    """Exact solution, or a fine collocation solution when the problem has none."""
    if p.exact is not None:
        return p.exact
    if getattr(args, "reference", None) is None:
        return None
    N, M = args.reference
    mesh = MeshSpec(N=N, M=M, align=not args.no_align).build(p)
    return solve_global(p, mesh, _options(args))


def _probe_points(T: float, count: int) -> np.ndarray:
    return T * np.arange(1, count + 1) / count


# ------------------------------------------------------------------ commands

def cmd_solve(args) -> int:
    cfg = build_config(args)
    mesh = cfg.mesh.build(cfg.problem)
    sol = solve_global(cfg.problem, mesh, cfg.options)
    p = cfg.problem
    print(f"problem {p.name}  T={fmt(p.T)}  N={mesh.N}  L={mesh.n_unknowns}  degrees={_degrees_text(mesh)}")
    exact = _reference(p, args)
    if exact is not None:
        rep = metrics.error_report(exact, sol, cfg.samples_per_element)
        print(f"E1 = {rep.E1:.6e}\nE2 = {rep.E2:.6e}\nE3 = {rep.E3:.6e}")
    else:
        prof = oracle.residual_check(p, sol, _probe_points(p.T, 20))
        print("no exact solution; residual profile |K u - f|:")
        for t, r in zip(prof.probes, prof.residuals):
            print(f"  t = {t:<10.6g} {r:.3e}")
    print("element  method  iterations  residual    condition")
    for d in sol.diagnostics:
        print(f"{d.element:7d}  {d.method:6s}  {d.iterations:10d}  {d.residual:.3e}   {d.condition:.3e}")
    if cfg.out:
        rows = []
        for n in range(mesh.N):
            t = metrics.element_samples(*mesh.element(n), cfg.samples_per_element)
            u = sol.evaluate_on(n, t)
            if exact is not None:
                ue = np.broadcast_to(np.asarray(exact(t), dtype=float), t.shape)
                rows.extend(zip(t, u, ue, np.abs(ue - u)))
            else:
                rows.extend(zip(t, u))
        header = ("t", "u_approx", "u_exact", "abs_err") if exact is not None else ("t", "u_approx")
        write_csv(rows, header, cfg.out)
    return 0


def _degrees_text(mesh: Mesh) -> str:
    d = mesh.degrees
    return str(d[0]) if len(set(d)) == 1 else " ".join(str(v) for v in d)


def convergence_rows(args) -> list[metrics.SweepRow]:
    Ns = args.N_list or ((args.N,) if args.N is not None else None)
    Ms = args.M_list or ((args.M,) if args.M is not None else None)
    if not Ns or not Ms:
        raise ConfigError("a sweep needs --N/--N-list and --M/--M-list")
    base = build_config(args, N=Ns[0], M=Ms[0])
    exact = _reference(base.problem, args)
    if exact is None:
        raise ConfigError(f"{base.problem.name} has no exact solution; pass --reference N,M")
    rows = []
    # p-sweeps vary M fastest; h- and hp-sweeps vary N fastest so rho compares halvings
    pairs = [(N, M) for N in Ns for M in Ms] if len(Ns) == 1 else [(N, M) for M in Ms for N in Ns]
    for N, M in pairs:
        cfg = replace(base, mesh=replace(base.mesh, N=N, M=M))
        mesh = cfg.mesh.build(cfg.problem)
        t0 = time.perf_counter()
        sol = solve_global(cfg.problem, mesh, cfg.options)
        elapsed = time.perf_counter() - t0
        rep = metrics.error_report(exact, sol, cfg.samples_per_element)
        rows.append(metrics.SweepRow(N, M, mesh.n_unknowns, rep.E1, rep.E2, rep.E3, None,
                                     elapsed if args.timing else None))
    return metrics.attach_orders(rows)


def cmd_convergence(args) -> int:
    rows = convergence_rows(args)
    write_csv([(r.N, r.M, r.L, r.E1, r.E2, r.E3, r.rho, r.seconds) for r in rows], CSV_HEADER, args.out)
    return 0


def cmd_verify(args) -> int:
    cfg = build_config(args)
    p = cfg.problem
    mesh = cfg.mesh.build(p)
    sol = solve_global(p, mesh, cfg.options)
    prof = oracle.residual_check(p, sol, _probe_points(p.T, args.probes), args.panels, args.degree)
    print(f"problem {p.name}  N={mesh.N}  degrees={_degrees_text(mesh)}")
    print(f"residual check: max |K u - f| = {prof.max:.3e} over {prof.probes.size} probes")
    try:
        ref = oracle.picard_reference(p, args.grid, args.iterations)
    except (oracle.OracleError, ValueError) as exc:
        print(f"picard reference unavailable: {type(exc).__name__}: {exc}")
    else:
        gap = float(np.max(np.abs(sol(ref.grid) - ref.u)))
        print(f"picard reference: {args.grid} points, last change {ref.last_change:.3e}")
        print(f"solver vs picard: max discrepancy = {gap:.3e}")
    return 0


def _element_indicator(p: ProblemSpec, sol: PiecewiseLegendreSolution, exact, n: int,
                       samples: int, opts: SolveOptions) -> float:
    """Error attributable to element ``n`` alone.

    With an exact solution, the element is re-solved with the exact solution
    as its history, so errors carried in from earlier elements do not count.
    Otherwise the residual at five probes inside the element is used.
    """
    mesh = sol.mesh
    a, b = mesh.element(n)
    if exact is None:
        probes = a + (b - a) * np.arange(1, 6) / 5
        return oracle.residual_check(p, sol, probes).max
    history = HistoryTerm()
    for k in range(n):
        rule = gauss_legendre(mesh.degrees[k])
        ak, bk = mesh.element(k)
        s_nodes = mesh.from_reference(k, rule.nodes)
        history.append(s_nodes, 0.5 * (bk - ak) * rule.weights,
                       np.broadcast_to(np.asarray(exact(s_nodes), dtype=float), s_nodes.shape))
    # same starts as the global march, with the exact value replacing the
    # previous element's end value
    start = element_start(p, mesh, n, None)
    if start is None and n > 0:
        start = np.array([float(exact(np.nextafter(a, -np.inf)))])
    local, _ = solve_element(p, mesh, n, history, opts, start)
    t = metrics.element_samples(a, b, samples)
    ue = np.broadcast_to(np.asarray(exact(t), dtype=float), t.shape)
    return float(np.max(np.abs(ue - local.series(mesh.to_reference(n, t)))))


def adapt(p: ProblemSpec, mesh: Mesh, target: float, max_rounds: int, opts: SolveOptions,
          indicator: str = "exact", samples: int = 41, max_degree: int = 30):
    """Minimal adaptive loop; returns (trace rows, final solution, converged flag).

    Each round solves and evaluates one indicator per element. Elements above
    ``target`` are p-enriched, unless their last p-step reduced the indicator
    by less than a factor of two (or the degree cap is hit); those are bisected.
    """
    exact = p.exact if indicator == "exact" else None
    if indicator == "exact" and exact is None:
        raise ConfigError(f"{p.name} has no exact solution; use --indicator residual")
    # per element: indicator before its last p-step (None when not just p-enriched)
    before_p: list = [None] * mesh.N
    trace = []
    for rnd in range(max_rounds + 1):
        sol = solve_global(p, mesh, opts)
        ind = [_element_indicator(p, sol, exact, n, samples, opts) for n in range(mesh.N)]
        trace.append((rnd, mesh.N, " ".join(str(d) for d in mesh.degrees), max(ind)))
        if max(ind) <= target:
            return trace, sol, True
        if rnd == max_rounds:
            break
        knots = [float(mesh.knots[0])]
        degrees = []
        marks = []
        for n in range(mesh.N):
            a, b = mesh.element(n)
            d = mesh.degrees[n]
            if ind[n] <= target:
                knots.append(b)
                degrees.append(d)
                marks.append(None)
                continue
            slow = before_p[n] is not None and ind[n] > 0.5 * before_p[n]
            if slow or d >= max_degree:
                knots.extend([0.5 * (a + b), b])
                degrees.extend([d, d])
                marks.extend([None, None])
            else:
                knots.append(b)
                degrees.append(d + 1)
                marks.append(ind[n])
        mesh = Mesh(np.array(knots), tuple(degrees))
        before_p = marks
    return trace, sol, False


def cmd_adapt(args) -> int:
    cfg = build_config(args)
    mesh = cfg.mesh.build(cfg.problem)
    trace, sol, ok = adapt(cfg.problem, mesh, args.target, args.max_rounds, cfg.options,
                           args.indicator, max_degree=min(args.max_degree, MAX_DEGREE))
    write_csv(trace, ("round", "N", "degrees", "indicator_max"), cfg.out)
    if not ok:
        print(f"budget of {args.max_rounds} rounds exhausted; best indicator {trace[-1][3]:.3e}",
              file=sys.stderr)
    return 0


def cmd_list(args) -> int:
    for name, (_, desc) in REGISTRY.items():
        print(f"{name:6s} {desc}")
    return 0


# ------------------------------------------------------------------ parser

def _add_common(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("problem")
    g.add_argument("--problem", help="registry name (see 'list')")
    g.add_argument("--config", help="JSON problem description")
    g.add_argument("--T", type=float, help="time horizon")
    g.add_argument("--r", type=float, help="regularity parameter of ex10")
    g.add_argument("--printed", action="store_true",
                   help="ex7: use the rounded constants instead of the exact ones")
    m = sp.add_argument_group("mesh")
    m.add_argument("--N", type=int, help="number of uniform elements")
    m.add_argument("--M", type=int, help="polynomial degree on every element")
    m.add_argument("--knots", type=_float_list, help="explicit knots a,b,c (0 is prepended if missing)")
    m.add_argument("--degrees", type=_int_list, help="one degree per element d1,d2,...")
    m.add_argument("--split-low", type=int, metavar="M_LOW",
                   help="degree on the first N/2 elements (split-degree layout)")
    m.add_argument("--no-align", action="store_true",
                   help="do not insert knots at the problem's breakpoints")
    s = sp.add_argument_group("solver")
    s.add_argument("--tol", type=float, default=SolveOptions.tol)
    s.add_argument("--max-newton", type=int, default=SolveOptions.max_newton)
    s.add_argument("--jacobian", choices=("analytic", "fd"), default="analytic")
    s.add_argument("--init", choices=("zero", "prev", "sd"), default="sd")
    sp.add_argument("--samples-per-element", type=int, default=metrics.DEFAULT_SAMPLES)
    sp.add_argument("--reference", type=_int_list, metavar="N,M",
                    help="reference solve for problems without an exact solution")
    sp.add_argument("--out", help="output CSV path (default: stdout for tables)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hpvolterra", description=__doc__.split("\n\n")[0].strip())
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve one configuration")
    _add_common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("convergence", help="sweep N and/or M and write a CSV table")
    _add_common(sp)
    sp.add_argument("--N-list", type=_int_list, help="comma-separated N values")
    sp.add_argument("--M-list", type=_int_list, help="comma-separated degrees")
    sp.add_argument("--timing", action="store_true", help="fill the seconds column")
    sp.set_defaults(func=cmd_convergence)

    sp = sub.add_parser("verify", help="residual check and Picard comparison")
    _add_common(sp)
    sp.add_argument("--probes", type=int, default=200)
    sp.add_argument("--panels", type=int, default=32)
    sp.add_argument("--degree", type=int, default=16, help="Gauss points per panel")
    sp.add_argument("--grid", type=int, default=2048, help="Picard grid points")
    sp.add_argument("--iterations", type=int, default=40, help="Picard iterations")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("adapt", help="minimal adaptive hp refinement")
    _add_common(sp)
    sp.add_argument("--target", type=float, required=True)
    sp.add_argument("--max-rounds", type=int, default=20)
    sp.add_argument("--max-degree", type=int, default=30)
    sp.add_argument("--indicator", choices=("exact", "residual"), default="exact")
    sp.set_defaults(func=cmd_adapt)

    sp = sub.add_parser("list", help="list registered problems")
    sp.set_defaults(func=cmd_list)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SolverError as exc:
        where = f" on element {exc.element}" if exc.element is not None else ""
        print(f"solver error{where}: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ProblemConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
