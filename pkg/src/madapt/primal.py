"""The mcG(q) and mdG(q) solvers: slab-by-slab fixed-point iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._slab import get_layout, local_matrices
from .core import (
    DomainError,
    NumericalError,
    OdeProblem,
    Partition,
    PiecewisePolySolution,
    as_degrees,
)
from .polyquad import QuadratureRule, gauss_rule, method_quadrature, shifted_legendre

log = logging.getLogger(__name__)

METHODS = ("mcG", "mdG")


class ConvergenceError(NumericalError):
    """Fixed-point iteration did not reach the tolerance on a slab."""

    def __init__(self, slab, update, iterations):
        self.slab = slab
        self.update = update
        self.iterations = iterations
        super().__init__(
            f"fixed-point iteration did not converge on slab {slab} after {iterations} sweeps "
            f"(last update {update:.3e}); the slab is probably too long for the Lipschitz constant"
        )


@dataclass
class SolverConfig:
    """Settings of the fixed-point solvers.

    ``q`` is one degree for all components or one per component. ``sweep`` is
    ``"gauss-seidel"`` (elements updated in order of their right end point,
    reading the newest values) or ``"jacobi"`` (all elements read the previous
    iterate).
    """

    method: str = "mcG"
    q: object = 1
    tol: float = 1e-12
    max_iterations: int = 500
    quadrature: Optional[QuadratureRule] = None
    sweep: str = "gauss-seidel"

    def __post_init__(self):
        norm = {"mcg": "mcG", "mdg": "mdG"}
        self.method = norm.get(str(self.method).lower(), self.method)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.sweep not in ("gauss-seidel", "jacobi"):
            raise ValueError(f"unknown sweep {self.sweep!r}")

    def degrees(self, dimension):
        qs = as_degrees(self.q, dimension)
        low = 1 if self.method == "mcG" else 0
        if min(qs) < low:
            raise ValueError(f"{self.method} needs q >= {low}, got {qs}")
        return qs


def _check_finite(F, slab, t):
    if not np.all(np.isfinite(F)):
        raise NumericalError(f"non-finite right-hand side on slab {slab.index} near t={t:.6g}")


def _sweep_gauss_seidel(problem, layout, slab, X):
    N = layout.N
    K = slab.length
    delta = 0.0
    for e_idx in layout.forward_order:
        e = layout.elements[e_idx]
        vals = (e.E @ X).reshape(N, -1)
        t = slab.t0 + e.rel_points * K
        F = problem.f_batch(vals, t)[e.i]
        _check_finite(F, slab, t[0])
        new = X[e.left] + (K / layout.counts[e.i]) * (e.W @ F)
        delta = max(delta, float(np.max(np.abs(new - X[e.dofs]))))
        X[e.dofs] = new
    return delta


def _sweep_jacobi(problem, layout, slab, X):
    E_all, comp, rel, dofs, lefts, H = layout.jacobi_operators()
    K = slab.length
    vals = E_all @ X
    t = slab.t0 + rel * K
    F = problem.f_batch(vals, t)
    Fsel = F[comp, np.arange(len(comp))]
    _check_finite(Fsel, slab, t[0])
    new = X[lefts] + K * (H @ Fsel)
    delta = float(np.max(np.abs(new - X[dofs])))
    X[dofs] = new
    return delta


def solve_primal(problem: OdeProblem, partition: Partition, config: SolverConfig) -> PiecewisePolySolution:
    """Compute the mcG(q) or mdG(q) solution slab by slab.

    Each slab starts from constant extrapolation of the incoming values and
    sweeps the fixed-point formula over its elements until the largest dof
    update falls below ``config.tol``.
    """
    N = problem.dimension
    if partition.dimension != N:
        raise ValueError(f"partition has {partition.dimension} components, problem has {N}")
    degrees = config.degrees(N)
    sweep = _sweep_gauss_seidel if config.sweep == "gauss-seidel" else _sweep_jacobi
    carried = problem.u0.astype(float).copy()
    blocks = [[] for _ in range(N)]
    iterations = []
    updates = []
    for slab in partition.slabs:
        layout = get_layout(config.method, slab.counts, degrees, config.quadrature)
        X = np.empty(layout.size)
        for i in range(N):
            X[layout.offsets[i]:layout.offsets[i] + 1 + slab.counts[i] * layout.nd[i]] = carried[i]
        history = []
        for it in range(1, config.max_iterations + 1):
            delta = sweep(problem, layout, slab, X)
            history.append(delta)
            if delta < config.tol:
                break
        else:
            raise ConvergenceError(slab.index, delta, config.max_iterations)
        iterations.append(it)
        updates.append(history)
        for i in range(N):
            for p in range(slab.counts[i]):
                blocks[i].append(X[layout.element_nodal_index(i, p)])
            carried[i] = X[layout.last_index[i]]
    values = tuple(np.array(b) for b in blocks)
    info = {"iterations": iterations, "total_iterations": int(sum(iterations)), "converged": True,
            "updates": updates}
    log.debug("%s solve: %d slabs, %d sweeps", config.method, len(iterations), info["total_iterations"])
    return PiecewisePolySolution(config.method, partition, degrees, values, problem.u0.copy(), info)


def _on_node(nodes, t):
    scale = max(1.0, abs(t))
    return bool(np.any(np.abs(nodes - t) <= 1e-14 * scale))


def residual(solution: PiecewisePolySolution, problem: OdeProblem, i: int, t: float, side=None) -> float:
    """Pointwise residual ``U_i'(t) - f_i(U(t), t)`` inside an element of component i.

    At a node of component i a one-sided limit must be requested with
    ``side='left'`` or ``side='right'``.
    """
    nodes = solution.partition.components.nodes[i]
    if not 0 < t <= solution.T and not (t == 0 and side == "right"):
        raise DomainError(f"t={t} outside (0, {solution.T}]")
    if side is None:
        if _on_node(nodes, t):
            raise DomainError(f"t={t} is a node of component {i}; pass side='left' or 'right'")
        side = "left"
    tt = np.array([t])
    du = solution.evaluate_component(i, tt, side, derivative=True)[0]
    u = solution.evaluate_all(tt, side)
    return float(du - problem.f_batch(u, tt)[i, 0])


def element_state(solution, i):
    """Per-element local vectors ``[left, dofs]`` of component i, shape (M_i, 1 + nd)."""
    vals = solution.values[i]
    if solution.method == "mcG":
        return vals
    lefts = np.concatenate([[solution.initial[i]], vals[:-1, -1]])
    return np.column_stack([lefts, vals])


def check_galerkin_orthogonality(solution: PiecewisePolySolution, problem: OdeProblem,
                                 quadrature: Optional[QuadratureRule] = None):
    """Largest |jump term + int R v dt| per element over a Legendre test basis.

    Integrals use the method's quadrature (or ``quadrature``), the same rule
    the solver used. Returns one array of violations per component.
    """
    out = []
    nodes_all = solution.partition.components.nodes
    for i, q in enumerate(solution.degrees):
        rule = quadrature or method_quadrature(solution.method, q)
        ntest = q if solution.method == "mcG" else q + 1
        # Legendre tests stay bounded by 1 on [0, 1]
        test_pts = gauss_rule(ntest).points
        A, B = local_matrices(solution.method, q, test_pts, rule)
        to_leg = _lagrange_to_legendre(test_pts, ntest)
        A = to_leg @ A
        B = to_leg @ B
        nodes = nodes_all[i]
        a, k = nodes[:-1], np.diff(nodes)
        t = (a[:, None] + k[:, None] * rule.points[None, :])
        U = solution.evaluate_all(t.reshape(-1))
        F = problem.f_batch(U, t.reshape(-1))[i].reshape(t.shape)
        X = element_state(solution, i)
        viol = X @ A.T - k[:, None] * (F @ B.T)
        out.append(np.max(np.abs(viol), axis=1))
    return out



def _lagrange_to_legendre(points, n):
    """Matrix turning Lagrange-basis test rows into Legendre-basis test rows."""
    # p_l = sum_n p_l(x_n) L_n
    return shifted_legendre(n, points).T
