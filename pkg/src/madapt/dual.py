"""Discrete dual solvers mcG(q)* / mdG(q)* and stability factors.

The dual solution is the exact adjoint of the discrete primal equations
(including their quadrature), linearized with the mean-value Jacobian along
a pair of trajectories. It is computed slab by slab backward in time with
the same kind of fixed-point sweep as the primal problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._slab import get_layout, local_matrices
from .core import NumericalError, OdeProblem, PiecewisePolySolution, norm_lp
from .polyquad import QuadratureRule, basis_for, gauss_rule, trial_points
from .primal import ConvergenceError


@dataclass(frozen=True)
class DualData:
    """Terminal value ``psi`` and forcing ``g`` of the dual problem.

    ``g(t)`` takes a time array of shape (P,) and returns (N, P). Integrals
    against ``g`` use a Gauss rule with ``g_points`` points on every element
    of every component, both when building the dual load and when
    evaluating the functional.
    """

    psi: np.ndarray
    g: Optional[Callable] = None
    mode: str = "psi"
    descriptor: str = ""
    g_points: int = 8

    @classmethod
    def psi_mode(cls, psi, descriptor=""):
        psi = np.array(psi, dtype=float)
        if not np.any(psi):
            raise ValueError("psi must be nonzero when g = 0")
        return cls(psi, None, "psi", descriptor or "psi=" + ",".join(f"{x:.6g}" for x in psi))

    @classmethod
    def g_mode(cls, dimension, partition, i, j, sign=None, g_points=8):
        """``g_i = sgn(...) / k_ij`` on element (i, j), zero elsewhere; ``sign`` defaults to +1."""
        a, b = partition.components.interval(i, j)
        k = b - a

        def g(t):
            t = np.atleast_1d(t)
            out = np.zeros((dimension, len(t)))
            inside = (t > a) & (t <= b)
            s = np.ones(inside.sum()) if sign is None else np.sign(sign(t[inside]))
            out[i, inside] = s / k
            return out

        return cls(np.zeros(dimension), g, "g", f"g element i={i} j={j}", g_points)

    def functional(self, v: PiecewisePolySolution):
        """``L(v) = (v(T), psi) + int (v, g) dt`` with this data's quadrature."""
        val = float(np.dot(v.final_value(), self.psi))
        if self.g is not None:
            val += self._g_integral(v.partition, lambda i, t: v.evaluate_component(i, t))
        return val

    def _g_integral(self, partition, evaluate):
        rule = gauss_rule(self.g_points)
        total = 0.0
        for i, nodes in enumerate(partition.components.nodes):
            a, k = nodes[:-1], np.diff(nodes)
            t = (a[:, None] + k[:, None] * rule.points[None, :]).reshape(-1)
            gi = self.g(t)[i]
            if not np.any(gi):
                continue
            w = (k[:, None] * rule.weights[None, :]).reshape(-1)
            total += float(np.sum(w * gi * evaluate(i, t)))
        return total

    def l1_linf_norm(self, partition):
        """Discrete ``||g||_{L1([0,T], l_inf)}`` on the merged grid."""
        if self.g is None:
            return 0.0
        rule = gauss_rule(self.g_points)
        nodes = partition.components.all_nodes()
        a, k = nodes[:-1], np.diff(nodes)
        t = (a[:, None] + k[:, None] * rule.points[None, :]).reshape(-1)
        w = (k[:, None] * rule.weights[None, :]).reshape(-1)
        return float(np.sum(w * np.max(np.abs(self.g(t)), axis=0)))


@dataclass(frozen=True)
class LinearizationPath:
    """Two trajectories between which the Jacobian is averaged."""

    reference: object  # pi u: callable (N, P) <- (P,) or a PiecewisePolySolution
    solution: PiecewisePolySolution
    s_rule: QuadratureRule = field(default_factory=lambda: gauss_rule(3))

    def states(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ref = self.reference.evaluate_all(t) if isinstance(self.reference, PiecewisePolySolution) \
            else np.asarray(self.reference(t), dtype=float).reshape(-1, len(t))
        return ref, self.solution.evaluate_all(t)


def mean_jacobian_states(problem: OdeProblem, ref, sol, t, s_rule=None):
    """``sum_r w_r df/du(s_r ref + (1 - s_r) sol, t)`` for columns of ``ref``/``sol``; shape (P, N, N)."""
    s_rule = s_rule or gauss_rule(3)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    J = np.zeros((len(t), problem.dimension, problem.dimension))
    for s, w in zip(s_rule.points, s_rule.weights):
        state = s * ref + (1 - s) * sol
        jac = problem.jac_batch(state, t)
        if not np.all(np.isfinite(jac)):
            raise NumericalError(f"non-finite Jacobian at t={t[0]:.6g}, state {state[:, 0]}")
        J += w * jac
    return J


def mean_jacobian(problem: OdeProblem, path: LinearizationPath, t: float) -> np.ndarray:
    """Mean value of df/du over the segment between the two trajectories at time t."""
    ref, sol = path.states(np.array([t]))
    return mean_jacobian_states(problem, ref, sol, np.array([t]), path.s_rule)[0]


def dual_method(method):
    return {"mcG": "mcG*", "mdG": "mdG*"}[method]


class _DualSlab:
    """Adjoint operators of one slab pattern."""

    def __init__(self, layout, quadrature=None):
        from .polyquad import method_quadrature

        self.layout = layout
        method = layout.method
        self.blocks = []
        start = 0
        for e in layout.elements:
            q = layout.degrees[e.i]
            rule = quadrature or method_quadrature(method, q)
            test = trial_points(dual_method(method), q)
            A, B = local_matrices(method, q, test, rule)
            D = A[:, 1:]
            n = len(test)
            self.blocks.append((A, B, np.linalg.inv(D.T), slice(start, start + n)))
            start += n
        self.size = start

    def coupling(self, J_rows, K):
        """Matrix C (nX, nPhi) with the transposed Galerkin operator of the slab."""
        lay = self.layout
        C = np.zeros((lay.size, self.size))
        for e, (A, B, _, sl), Jr in zip(lay.elements, self.blocks, J_rows):
            h = K / lay.counts[e.i]
            C[e.cols, sl] += A.T
            E = e.E.reshape(lay.N, -1, lay.size)
            C[:, sl] -= h * np.einsum("lsx,sl,ns->xn", E, Jr, B)
        return C


def solve_dual(problem: OdeProblem, primal: PiecewisePolySolution, data: DualData,
               reference=None, config=None, s_rule=None) -> PiecewisePolySolution:
    """Discrete dual solution Phi, computed backward slab by slab.

    ``reference`` is the trajectory pi u entering the mean-value Jacobian
    J(pi u, U, t); by default the primal solution itself. ``config`` supplies
    ``tol``, ``max_iterations`` and ``quadrature`` (a primal SolverConfig).
    """
    from .primal import SolverConfig

    config = config or SolverConfig(primal.method, primal.degrees)
    reference = primal if reference is None else reference
    path = LinearizationPath(reference, primal, s_rule or gauss_rule(3))
    partition = primal.partition
    N = problem.dimension
    method = primal.method
    degrees = primal.degrees
    slabs = partition.slabs
    g_rule = gauss_rule(data.g_points)

    carry = {}  # last-dof index of component -> load from the later slab
    phi_right = np.array(data.psi, dtype=float)
    blocks = [[None] * partition.components.num_elements(i) for i in range(N)]
    iterations = []
    for slab in reversed(slabs):
        layout = get_layout(method, slab.counts, degrees, config.quadrature)
        ops = _dual_ops(layout, config.quadrature)
        K = slab.length
        J_rows = []
        for e in layout.elements:
            t = slab.t0 + e.rel_points * K
            ref, sol = path.states(t)
            J_rows.append(mean_jacobian_states(problem, ref, sol, t, path.s_rule)[:, e.i, :])
        C = ops.coupling(J_rows, K)

        b = np.zeros(layout.size)
        if slab is slabs[-1]:
            for i in range(N):
                b[layout.last_index[i]] += data.psi[i]
        if data.g is not None:
            b += _g_load(data, layout, slab, g_rule)
        for idx, val in carry.items():
            b[idx] -= val
        # fixed-point sweep, starting from the values entering at the slab's right end
        Phi = np.empty(ops.size)
        for e, (_, _, _, sl) in zip(layout.elements, ops.blocks):
            Phi[sl] = phi_right[e.i]
        for it in range(1, config.max_iterations + 1):
            delta = 0.0
            for e_idx in layout.backward_order:
                e = layout.elements[e_idx]
                _, _, DinvT, sl = ops.blocks[e_idx]
                res = b[e.dofs] - C[e.dofs] @ Phi
                upd = DinvT @ res
                Phi[sl] += upd
                delta = max(delta, float(np.max(np.abs(upd))))
            if not np.isfinite(delta):
                raise NumericalError(f"non-finite dual values on slab {slab.index}")
            if delta < config.tol:
                break
        else:
            raise ConvergenceError(slab.index, delta, config.max_iterations)
        iterations.append(it)

        out = C @ Phi - b
        carry = {}
        prev = slab.index - 1
        if prev >= 0:
            prev_layout = get_layout(method, slabs[prev].counts, degrees, config.quadrature)
            for i in range(N):
                carry[prev_layout.last_index[i]] = out[layout.first_index[i]]
        for e, (_, _, _, sl) in zip(layout.elements, ops.blocks):
            blocks[e.i][slab.first[e.i] + e.p] = Phi[sl].copy()
        for i in range(N):
            first = blocks[i][slab.first[i]]
            basis = basis_for(trial_points(dual_method(method), degrees[i]))
            phi_right[i] = float(basis.values(0.0)[0] @ first)

    values = tuple(np.array(b) for b in blocks)
    iterations.reverse()
    info = {"iterations": iterations, "total_iterations": int(sum(iterations)), "data": data}
    return PiecewisePolySolution(dual_method(method), partition, degrees, values, phi_right.copy(), info)


_OPS_CACHE = {}


def _dual_ops(layout, quadrature):
    key = (id(layout), None if quadrature is None else id(quadrature))
    ops = _OPS_CACHE.get(key)
    if ops is None or ops.layout is not layout:
        ops = _DualSlab(layout, quadrature)
        _OPS_CACHE[key] = ops
    return ops


def _g_load(data, layout, slab, rule):
    """``int phi_x g dt`` for every trial basis function phi_x of the slab."""
    b = np.zeros(layout.size)
    K = slab.length
    for e in layout.elements:
        h = K / layout.counts[e.i]
        t = slab.t0 + (e.p + rule.points) * h
        gi = data.g(t)[e.i]
        if not np.any(gi):
            continue
        basis = basis_for(trial_points(layout.method, layout.degrees[e.i]))
        vals = basis.values(rule.points)  # (R, nodal)
        b[e.nodal] += h * (rule.weights * gi) @ vals
    return b


def _merged_grid_rule(partition, npts):
    rule = gauss_rule(npts)
    nodes = partition.components.all_nodes()
    a, k = nodes[:-1], np.diff(nodes)
    t = (a[:, None] + k[:, None] * rule.points[None, :]).reshape(-1)
    w = (k[:, None] * rule.weights[None, :]).reshape(-1)
    return t, w


def stability_factor_S(problem: OdeProblem, path: LinearizationPath, phi: PiecewisePolySolution,
                       npts: Optional[int] = None) -> float:
    """``S(T) = int_0^T ||J^T(path) Phi||_2 dt``.

    Integrated with a Gauss rule on every interval of the merged node set, so
    no quadrature point sits on a discontinuity of any component.
    """
    npts = npts or max(phi.degrees) + 2
    t, w = _merged_grid_rule(phi.partition, npts)
    ref, sol = path.states(t)
    J = mean_jacobian_states(problem, ref, sol, t, path.s_rule)
    vals = phi.evaluate_all(t)
    jt_phi = np.einsum("pln,lp->pn", J, vals)
    return float(np.sum(w * np.sqrt(np.sum(jt_phi**2, axis=1))))


def slab_max_norms(phi: PiecewisePolySolution, samples: int = 16) -> np.ndarray:
    """``||Phi||_{L_inf(T_n, l_inf)}`` per slab, sampled at ``samples + 1`` points per element."""
    tau = np.linspace(0.0, 1.0, samples + 1)
    out = []
    for slab in phi.partition.slabs:
        m = 0.0
        for i, count in enumerate(slab.counts):
            basis = basis_for(phi.points(i))
            block = phi.values[i][slab.first[i]:slab.first[i] + count]
            m = max(m, float(np.max(np.abs(block @ basis.values(tau).T))))
        out.append(m)
    return np.array(out)


@dataclass
class StabilityReport:
    mode: str
    descriptor: str
    S: Optional[float]
    Sbar: float
    slab_max: np.ndarray
    bound: Optional[float] = None
    bound_holds: Optional[bool] = None
    assumption_holds: Optional[bool] = None

    def rows(self):
        yield ("mode", self.mode)
        yield ("data", self.descriptor)
        yield ("S", "" if self.S is None else f"{self.S:.12g}")
        yield ("Sbar", f"{self.Sbar:.12g}")
        if self.bound is not None:
            yield ("Sbar_bound", f"{self.bound:.12g}")
            yield ("bound_holds", str(self.bound_holds))
            yield ("assumption_KCqCf_le_1", str(self.assumption_holds))
        for n, v in enumerate(self.slab_max):
            yield (f"phi_max_slab_{n}", f"{v:.12g}")


def stability_factor_Sbar(phi: PiecewisePolySolution, C_f, psi=None, C_q: float = 1.0, slabs=None):
    """``Sbar(T) = sum_n K_n C_f ||Phi||_{L_inf(T_n, l_inf)}`` and its exponential bound.

    ``C_f`` is one value or one value per slab. With ``psi`` given, also
    returns ``||psi||_inf exp(C_q max(C_f) T)`` and whether it bounds Sbar.
    Returns ``(Sbar, slab_max, bound, holds, assumption)``.
    """
    slabs = phi.partition.slabs if slabs is None else slabs
    if C_f is None:
        raise ValueError("C_f must be supplied (one value or one per slab)")
    C = np.broadcast_to(np.asarray(C_f, dtype=float), (len(slabs),))
    K = np.array([s.length for s in slabs])
    slab_max = slab_max_norms(phi)
    Sbar = float(np.sum(K * C * slab_max))
    if psi is None:
        return Sbar, slab_max, None, None, None
    bound = norm_lp(psi, np.inf) * float(np.exp(C_q * np.max(C) * phi.T))
    assumption = bool(np.all(K * C_q * C <= 1.0))
    return Sbar, slab_max, bound, Sbar <= bound, assumption


def stability_report(problem, primal, data: DualData, C_f=None, C_q=1.0, reference=None, config=None):
    phi = solve_dual(problem, primal, data, reference=reference, config=config)
    path = LinearizationPath(primal if reference is None else reference, primal)
    S = stability_factor_S(problem, path, phi)
    if C_f is None:
        slab_max = slab_max_norms(phi)
        return phi, StabilityReport(data.mode, data.descriptor, S, float("nan"), slab_max)
    psi = data.psi if data.g is None else None
    Sbar, slab_max, bound, holds, assumption = stability_factor_Sbar(phi, C_f, psi, C_q)
    return phi, StabilityReport(data.mode, data.descriptor, S, Sbar, slab_max, bound, holds, assumption)
