"""Command line interface: ``madapt {solve,converge,dual,verify} [options]``.

Exit status is 0 on success, 1 for usage errors and 2 for numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .core import MadaptError, NumericalError, dump_solution, norm_lp, uniform_partition
from .dual import DualData, stability_report
from .primal import SolverConfig, check_galerkin_orthogonality, solve_primal
from .problems import available_problems, default_ratios, get_problem
from .verify import InvalidStudyError, check_error_representation, error_report, run_convergence_study

log = logging.getLogger("madapt")

COMMANDS = ("solve", "converge", "dual", "verify")


class UsageError(MadaptError):
    pass


def _floats(text):
    if text is None or text == "":
        return None
    return tuple(float(x) for x in str(text).split(","))


def _ints(text):
    if text is None or text == "":
        return None
    return tuple(int(x) for x in str(text).split(","))


@dataclass
class RunConfig:
    """Everything one CLI run needs; round-trips through a flat ``key=value`` text form."""

    command: str = "solve"
    problem: str = "test6"
    method: str = "mcg"
    q: int = 1
    k0: float = 0.1
    ratios: Optional[tuple] = None
    T: float = 1.0
    tol: float = 1e-12
    max_iter: int = 500
    levels: int = 5
    psi: Optional[tuple] = None
    g_element: Optional[tuple] = None
    cf: Optional[float] = None
    cq: float = 1.0
    out: Optional[str] = None
    format: str = "table"

    _parsers = {"q": int, "k0": float, "T": float, "tol": float, "max_iter": int, "levels": int,
                "ratios": _floats, "psi": _floats, "g_element": _ints, "cf": float, "cq": float}

    def validate(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.problem not in available_problems():
            raise UsageError(f"unknown problem {self.problem!r}; available: {', '.join(available_problems())}")
        if self.method.lower() not in ("mcg", "mdg"):
            raise UsageError(f"method must be mcg or mdg, got {self.method!r}")
        if not self.k0 > 0:
            raise UsageError(f"k0 must be positive, got {self.k0}")
        if not self.T > 0:
            raise UsageError(f"T must be positive, got {self.T}")
        if not self.tol > 0 or self.max_iter < 1 or self.levels < 1:
            raise UsageError("need tol > 0, max_iter >= 1 and levels >= 1")
        if self.format not in ("table", "csv"):
            raise UsageError(f"format must be table or csv, got {self.format!r}")
        if self.psi is not None and self.g_element is not None:
            raise UsageError("give either --psi or --g-element, not both")
        if self.g_element is not None and len(self.g_element) != 2:
            raise UsageError("--g-element takes i,j")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(**parse_config_text(text))

    def update(self, values: dict) -> "RunConfig":
        data = asdict(self)
        data.update({k: v for k, v in values.items() if v is not None})
        return RunConfig(**data)


def parse_config_text(text):
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"config line {n}: unknown key {key!r}")
        try:
            out[key] = RunConfig._parsers.get(key, str)(val)
        except ValueError as exc:
            raise UsageError(f"config line {n}: bad value for {key}: {exc}") from None
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="madapt", description="Multiadaptive Galerkin ODE solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "solve and dump the solution"),
                        ("converge", "convergence study under k0 halving"),
                        ("dual", "dual solution and stability factors"),
                        ("verify", "error representation and orthogonality checks")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--problem", choices=available_problems())
        p.add_argument("--method", type=str.lower, choices=("mcg", "mdg"))
        p.add_argument("--q", type=int)
        p.add_argument("--k0", type=float)
        p.add_argument("--ratios", type=_floats, help="comma separated step ratios per component")
        p.add_argument("--T", type=float)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--levels", type=int)
        p.add_argument("--psi", type=_floats, help="comma separated terminal dual data")
        p.add_argument("--g-element", dest="g_element", type=_ints, help="i,j of the element carrying g")
        p.add_argument("--cf", type=float, help="C_f for the slab-wise stability factor")
        p.add_argument("--cq", type=float)
        p.add_argument("--out")
        p.add_argument("--format", choices=("table", "csv"))
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args) -> RunConfig:
    cfg = RunConfig(command=args.command)
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = cfg.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
    flags = {f.name: getattr(args, f.name, None) for f in fields(RunConfig) if f.name != "command"}
    return cfg.update(flags).validate()


def _emit(rows, fmt, fh):
    rows = [(str(k), str(v)) for k, v in rows]
    if fmt == "csv":
        fh.write("key,value\n")
        for k, v in rows:
            fh.write(f"{k},{v}\n")
    else:
        width = max(len(k) for k, _ in rows)
        for k, v in rows:
            fh.write(f"{k:<{width}}  {v}\n")


def _setup(cfg):
    problem = get_problem(cfg.problem, T=cfg.T)
    ratios = cfg.ratios or default_ratios(cfg.problem, problem.dimension)
    if len(ratios) != problem.dimension:
        raise UsageError(f"need {problem.dimension} ratios, got {len(ratios)}")
    partition = uniform_partition(cfg.k0, ratios, problem.T)
    solver = SolverConfig(cfg.method, cfg.q, tol=cfg.tol, max_iterations=cfg.max_iter)
    return problem, ratios, partition, solver


def cmd_solve(cfg, stdout):
    problem, _, partition, solver = _setup(cfg)
    U = solve_primal(problem, partition, solver)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            dump_solution(U, fh)
    rows = [("problem", problem.name), ("method", f"{solver.method}({cfg.q})"),
            ("slabs", len(partition.slabs)), ("iterations_total", U.info["total_iterations"])]
    final = U.final_value()
    rows += [(f"U{i + 1}(T)", f"{v:.17g}") for i, v in enumerate(final)]
    if problem.exact is not None:
        exact = np.asarray(problem.exact(np.array([problem.T])), float).reshape(-1)
        rep = error_report(U, problem.exact)
        rows += [(f"u{i + 1}(T)", f"{v:.17g}") for i, v in enumerate(exact)]
        rows += [("error_l2", f"{rep.l2:.6e}"), ("error_linf", f"{rep.linf:.6e}")]
    _emit(rows, cfg.format, stdout)
    return 0


def cmd_converge(cfg, stdout):
    problem, ratios, _, _ = _setup(cfg)
    try:
        study = run_convergence_study(problem, cfg.method, cfg.q, cfg.k0, cfg.levels, ratios,
                                      tol=cfg.tol, max_iterations=cfg.max_iter)
        status = 0
    except InvalidStudyError as exc:
        study, status = exc.study, 2
        log.error("%s", exc)
    text = study.to_csv()
    if cfg.format == "table" and not cfg.out:
        stdout.write(f"{'k0':>12} {'error_l2':>12} {'error_linf':>12} {'iters':>7} {'seconds':>8}\n")
        for k, e2, ei, it, s in zip(study.k0, study.errors_l2, study.errors_linf, study.iterations, study.seconds):
            stdout.write(f"{k:12.6g} {e2:12.4e} {ei:12.4e} {int(it):7d} {s:8.3f}\n")
        stdout.write(text.splitlines()[-1] + "\n")
    elif cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
        stdout.write(text.splitlines()[-1] + "\n")
    else:
        stdout.write(text)
    return status


def _dual_data(cfg, problem, partition, U):
    N = problem.dimension
    if cfg.g_element is not None:
        i, j = cfg.g_element
        if not (0 <= i < N and 0 <= j < partition.components.num_elements(i)):
            raise UsageError(f"no element ({i}, {j})")
        return DualData.g_mode(N, partition, i, j)
    if cfg.psi is not None:
        if len(cfg.psi) != N:
            raise UsageError(f"need {N} psi values, got {len(cfg.psi)}")
        return DualData.psi_mode(cfg.psi)
    if problem.exact is not None:
        e = U.final_value() - np.asarray(problem.exact(np.array([problem.T])), float).reshape(-1)
        if norm_lp(e) > 0:
            return DualData.psi_mode(e / norm_lp(e), "psi=e(T)/|e(T)|")
    return DualData.psi_mode(np.eye(N)[0])


def cmd_dual(cfg, stdout):
    problem, _, partition, solver = _setup(cfg)
    U = solve_primal(problem, partition, solver)
    data = _dual_data(cfg, problem, partition, U)
    _, report = stability_report(problem, U, data, C_f=cfg.cf, C_q=cfg.cq, config=solver)
    rows = list(report.rows())
    if cfg.out:
        with open(cfg.out, "w") as fh:
            _emit(rows, "csv", fh)
    _emit(rows, cfg.format, stdout)
    return 0


def cmd_verify(cfg, stdout):
    problem, _, partition, solver = _setup(cfg)
    rows = [("problem", problem.name), ("method", f"{solver.method}({cfg.q})")]
    U = solve_primal(problem, partition, solver)
    viol = max(float(np.max(v)) for v in check_galerkin_orthogonality(U, problem))
    rows.append(("orthogonality_max", f"{viol:.3e}"))
    if problem.exact is not None:
        for mode in ("psi", "g"):
            chk = check_error_representation(problem, cfg.method, cfg.q, partition, mode, tol=cfg.tol,
                                             max_iterations=cfg.max_iter)
            rows += [(f"{mode}_lhs", f"{chk.lhs:.17g}"), (f"{mode}_rhs", f"{chk.rhs:.17g}"),
                     (f"{mode}_residual", f"{chk.residual:.3e}")]
    _emit(rows, cfg.format, stdout)
    return 0


HANDLERS = {"solve": cmd_solve, "converge": cmd_converge, "dual": cmd_dual, "verify": cmd_verify}


def main(argv=None, stdout=None):
    stdout = stdout or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return HANDLERS[cfg.command](cfg, stdout)
    except (UsageError, ValueError, KeyError) as exc:
        sys.stderr.write(f"madapt: error: {exc}\n")
        return 1
    except (NumericalError, InvalidStudyError) as exc:
        sys.stderr.write(f"madapt: numerical failure: {exc}\n")
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
