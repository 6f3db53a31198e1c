"""Convergence studies, error-representation checks, jump probes and oracle comparisons."""

from __future__ import annotations

import io
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    MadaptError,
    NumericalError,
    OdeProblem,
    OrderFit,
    PiecewisePolySolution,
    build_partition,
    fit_order,
    norm_lp,
    uniform_partition,
)
from .dual import DualData, solve_dual
from .interp import interpolate_solution
from .polyquad import gauss_rule
from .primal import SolverConfig, solve_primal

ROUNDOFF_FLOOR = 1e-13
JUMP_FLOOR = 1e-14


class InvalidStudyError(MadaptError):
    """Too few ladder levels above the roundoff floor to fit an order."""

    def __init__(self, study):
        self.study = study
        super().__init__(
            f"{study.method}({study.q}) on {study.problem}: {len(study.fit.window)} level(s) above "
            f"the floor {study.floor:g}, need 2 to fit an order; errors {list(study.errors_l2)}")


@dataclass
class ErrorReport:
    """Error at final time and optionally its sampled sup norm over [0, T]."""

    e: np.ndarray
    l2: float
    linf: float
    sup_linf: Optional[float] = None


def error_report(solution: PiecewisePolySolution, exact, dense=False, samples=16) -> ErrorReport:
    """``e(T) = U(T) - u(T)``; with ``dense=True`` also ``max |e|`` on ``samples`` points per element."""
    e = solution.final_value() - np.asarray(exact(np.array([solution.T])), dtype=float).reshape(-1)
    sup = None
    if dense:
        nodes = solution.partition.components.all_nodes()
        tau = (np.arange(samples) + 1.0) / samples
        t = (nodes[:-1, None] + np.diff(nodes)[:, None] * tau[None, :]).reshape(-1)
        sup = float(np.max(np.abs(solution.evaluate_all(t) - exact(t))))
    return ErrorReport(e, norm_lp(e, 2), norm_lp(e, np.inf), sup)


@dataclass
class ConvergenceStudy:
    problem: str
    method: str
    q: int
    k0: np.ndarray
    errors_l2: np.ndarray
    errors_linf: np.ndarray
    iterations: np.ndarray
    seconds: np.ndarray
    fit: OrderFit
    floor: float = ROUNDOFF_FLOOR

    @property
    def order(self):
        return self.fit.order

    def to_csv(self, with_seconds=True) -> str:
        """CSV table with one row per level and a footer with the fitted order and window."""
        out = io.StringIO()
        out.write("k0,error_l2,error_linf,iterations_total,seconds\n")
        for k, e2, ei, it, s in zip(self.k0, self.errors_l2, self.errors_linf, self.iterations, self.seconds):
            sec = f"{s:.3f}" if with_seconds else ""
            out.write(f"{float(k)!r},{e2:.17g},{ei:.17g},{int(it)},{sec}\n")
        window = ";".join(f"{float(self.k0[i])!r}" for i in self.fit.window)
        order = "nan" if self.order is None else f"{self.order:.6f}"
        out.write(f"# fitted_order={order} window={window} floor={self.floor:g}\n")
        return out.getvalue()


def _threads(threads):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("MADAPT_THREADS")
    return max(1, int(env)) if env else 1


def run_convergence_study(problem: OdeProblem, method, q, k0=0.1, levels=5, ratios=None, tol=1e-14,
                          max_iterations=2000, floor=ROUNDOFF_FLOOR, threads=None,
                          strict=True) -> ConvergenceStudy:
    """Errors at T for steps ``k0 * 2^-m``, m = 0..levels, and the fitted order.

    Component i uses steps ``ratios[i] * k0`` (all ones by default). Levels run
    on up to ``threads`` worker threads (default from ``MADAPT_THREADS``) and
    are merged by level index. With ``strict`` an :class:`InvalidStudyError`
    is raised when fewer than two levels lie above ``floor``.
    """
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    ratios = (1.0,) * problem.dimension if ratios is None else tuple(ratios)
    ks = k0 * 2.0 ** -np.arange(levels + 1)
    config = SolverConfig(method, q, tol=tol, max_iterations=max_iterations)

    def level(k):
        start = time.perf_counter()
        U = solve_primal(problem, uniform_partition(k, ratios, problem.T), config)
        rep = error_report(U, problem.exact)
        return rep.l2, rep.linf, U.info["total_iterations"], time.perf_counter() - start

    n = _threads(threads)
    if n == 1:
        rows = [level(k) for k in ks]
    else:
        with ThreadPoolExecutor(n) as pool:
            rows = list(pool.map(level, ks))
    e2, ei, its, secs = (np.array(c) for c in zip(*rows))
    study = ConvergenceStudy(problem.name, config.method, q, ks, e2, ei, its, secs,
                             fit_order(ks, e2, floor), floor)
    if strict and not study.fit.valid:
        raise InvalidStudyError(study)
    return study


@dataclass
class RepresentationCheck:
    lhs: float
    rhs: float
    data: DualData
    primal: PiecewisePolySolution
    dual: PiecewisePolySolution

    @property
    def residual(self):
        return abs(self.lhs - self.rhs)


def canonical_data(mode, problem, primal, reference, element=None):
    """``psi = e(T)/|e(T)|`` with g = 0, or g = sgn(ebar_i)/k_ij on one element with psi = 0.

    The default element for g-mode is the middle element of the last component.
    """
    N = problem.dimension
    if mode == "psi":
        e = primal.final_value() - np.asarray(problem.exact(np.array([problem.T])), float).reshape(-1)
        nrm = norm_lp(e, 2)
        psi = e / nrm if nrm > 0 else np.eye(N)[0]
        return DualData.psi_mode(psi, "psi=e(T)/|e(T)|")
    if mode == "g":
        part = primal.partition
        i, j = element if element is not None else (N - 1, part.components.num_elements(N - 1) // 2)

        def sign(t):
            s = np.sign(primal.evaluate_component(i, t) - reference.evaluate_component(i, t))
            return np.where(s == 0, 1.0, s)

        return DualData.g_mode(N, part, i, j, sign=sign)
    raise ValueError(f"unknown data mode {mode!r}")


def check_error_representation(problem: OdeProblem, method, q, partition, data="psi", tol=1e-12,
                               max_iterations=2000, npts=None) -> RepresentationCheck:
    """Both sides of ``L(ebar) = int (f(pi u) - f(u), Phi) dt`` with ``ebar = U - pi u``.

    ``pi u`` is the cG (mcG) or dG (mdG) interpolant of the exact solution and
    Phi the discrete dual solution linearized between ``pi u`` and U. The
    left side uses the same discrete g integrals as the dual load; the right
    side uses a Gauss rule with ``npts`` points on every interval of the
    merged node set.
    """
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution")
    config = SolverConfig(method, q, tol=tol, max_iterations=max_iterations)
    U = solve_primal(problem, partition, config)
    pu = interpolate_solution(problem.exact, partition, config.method, q)
    if isinstance(data, str):
        data = canonical_data(data, problem, U, pu)
    phi = solve_dual(problem, U, data, reference=pu, config=config)

    lhs = float(np.dot(U.final_value() - pu.final_value(), data.psi))
    if data.g is not None:
        lhs += data._g_integral(partition, lambda i, t: U.evaluate_component(i, t) - pu.evaluate_component(i, t))

    rule = gauss_rule(npts or 2 * max(U.degrees) + 10)
    nodes = partition.components.all_nodes()
    a, k = nodes[:-1], np.diff(nodes)
    t = (a[:, None] + k[:, None] * rule.points[None, :]).reshape(-1)
    w = (k[:, None] * rule.weights[None, :]).reshape(-1)
    df = problem.f_batch(pu.evaluate_all(t), t) - problem.f_batch(np.asarray(problem.exact(t), float), t)
    rhs = float(np.sum(w * np.sum(df * phi.evaluate_all(t), axis=0)))
    return RepresentationCheck(lhs, rhs, data, U, phi)


@dataclass
class JumpStudy:
    steps: np.ndarray
    max_jumps: np.ndarray
    fit: OrderFit

    @property
    def exponent(self):
        return self.fit.order


def probe_jump_scaling(problem: OdeProblem, q, k0=0.1, levels=5, tol=1e-15, floor=JUMP_FLOOR,
                       max_iterations=2000) -> JumpStudy:
    """Largest node jump of the mdG(q) solution for uniform steps ``k0 * 2^-m`` and its fitted exponent."""
    ks = k0 * 2.0 ** -np.arange(levels + 1)
    config = SolverConfig("mdG", q, tol=tol, max_iterations=max_iterations)
    jumps = []
    for k in ks:
        U = solve_primal(problem, build_partition([k] * problem.dimension, problem.T), config)
        jumps.append(max((np.max(np.abs(U.node_jumps(i)), initial=0.0) for i in range(problem.dimension))))
    jumps = np.array(jumps)
    return JumpStudy(ks, jumps, fit_order(ks, jumps, floor))


def _newton(G, x, jac, tol=1e-15, maxit=50):
    for _ in range(maxit):
        r = G(x)
        dx = np.linalg.solve(jac(x), -r)
        x = x + dx
        if np.max(np.abs(dx)) <= tol * (1.0 + np.max(np.abs(x))):
            break
    return x


def classical_stepper(name, problem: OdeProblem, k, steps):
    """Implicit Euler or the trapezoidal rule with uniform step k; returns (steps + 1, N) nodal values."""
    N = problem.dimension
    I = np.eye(N)
    f = lambda u, t: problem.f_batch(u[:, None], np.array([t]))[:, 0]
    J = lambda u, t: problem.jac_batch(u[:, None], np.array([t]))[0]
    out = [problem.u0.astype(float)]
    for n in range(steps):
        u, t0, t1 = out[-1], n * k, (n + 1) * k
        if name == "implicit-euler":
            G = lambda x: x - u - k * f(x, t1)
            DG = lambda x: I - k * J(x, t1)
        elif name == "trapezoid":
            fu = f(u, t0)
            G = lambda x: x - u - 0.5 * k * (fu + f(x, t1))
            DG = lambda x: I - 0.5 * k * J(x, t1)
        else:
            raise ValueError(f"unknown stepper {name!r}")
        out.append(_newton(G, u.copy(), DG))
    return np.array(out)


@dataclass
class OracleComparison:
    max_deviation: float
    first_offending_step: Optional[int]
    threshold: float

    @property
    def passed(self):
        return self.first_offending_step is None


def compare_oracle(method, q, problem: OdeProblem, reference=None, steps=100, threshold=1e-12,
                   tol=1e-15) -> OracleComparison:
    """Largest nodal deviation between the solver and a classical stepper over ``steps`` uniform steps.

    ``reference`` defaults to implicit Euler for mdG(0) and the trapezoidal
    rule for mcG(1).
    """
    config = SolverConfig(method, q, tol=tol)
    if reference is None:
        reference = {("mdG", 0): "implicit-euler", ("mcG", 1): "trapezoid"}.get((config.method, q))
        if reference is None:
            raise ValueError(f"no classical reference for {config.method}({q})")
    k = problem.T / steps
    U = solve_primal(problem, build_partition([k] * problem.dimension, problem.T), config)
    ref = classical_stepper(reference, problem, k, steps)
    ours = np.array([v[:, -1] for v in U.values]).T  # (steps, N) right end values
    dev = np.max(np.abs(ours - ref[1:]), axis=1)
    bad = np.flatnonzero(dev > threshold)
    return OracleComparison(float(np.max(dev)), int(bad[0]) + 1 if len(bad) else None, threshold)


def _collocation_tableau(kind, s):
    """Nodes and coefficients a_ns = int_0^{c_n} l_s of a collocation method on [0, 1]."""
    P = np.polynomial.legendre.Legendre
    if kind == "lobatto":
        inner = P.basis(s - 1).deriv().roots() if s > 2 else np.empty(0)
        c = np.concatenate([[-1.0], np.sort(np.real(inner)), [1.0]])
    elif kind == "radau":
        c = np.sort(np.real((P.basis(s) - P.basis(s - 1)).roots())) if s > 1 else np.array([1.0])
    else:
        raise ValueError(kind)
    c = (c + 1) / 2
    A = np.empty((s, s))
    for m in range(s):
        others = np.delete(c, m)
        lm = np.polynomial.Polynomial.fromroots(others) / np.prod(c[m] - others) if s > 1 \
            else np.polynomial.Polynomial([1.0])
        anti = lm.integ()
        A[:, m] = anti(c) - anti(0.0)
    return c, A


def monoadaptive_reference(method, q, problem: OdeProblem, k, steps):
    """Single-step collocation solve with uniform step k (Lobatto IIIA for mcG(q), Radau IIA for mdG(q)).

    Stage systems are solved with Newton's method. Returns the (steps + 1, N) values at the nodes.
    """
    method = {"mcg": "mcG", "mdg": "mdG"}.get(str(method).lower(), method)
    kind, s = ("lobatto", q + 1) if method == "mcG" else ("radau", q + 1)
    c, A = _collocation_tableau(kind, s)
    N = problem.dimension
    out = [problem.u0.astype(float)]
    for n in range(steps):
        u = out[-1]
        t = n * k + c * k

        def G(y):
            Y = y.reshape(s, N)
            F = problem.f_batch(Y.T, t).T
            return (Y - u[None, :] - k * A @ F).reshape(-1)

        def DG(y):
            Y = y.reshape(s, N)
            Jb = problem.jac_batch(Y.T, t)  # (s, N, N)
            M = np.eye(s * N)
            for a in range(s):
                for b in range(s):
                    M[a * N:(a + 1) * N, b * N:(b + 1) * N] -= k * A[a, b] * Jb[b]
            return M

        y = _newton(G, np.tile(u, s), DG)
        out.append(y.reshape(s, N)[-1])
    return np.array(out)


def compare_monoadaptive(method, q, problem: OdeProblem, k, tol=1e-15):
    """Largest deviation at the common nodes between the solver with equal steps and the collocation reference."""
    steps = int(round(problem.T / k))
    U = solve_primal(problem, build_partition([k] * problem.dimension, problem.T), SolverConfig(method, q, tol=tol))
    ref = monoadaptive_reference(method, q, problem, k, steps)
    ours = np.array([v[:, -1] for v in U.values]).T
    return float(np.max(np.abs(ours - ref[1:])))
