"""Interpolation operators onto the primal and dual trial spaces of one interval.

Each operator fixes the value at zero, one or two end points and imposes
orthogonality of the error against lower-degree polynomials. Results are
stored in the nodal bases used by the solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import OrderFit, PiecewisePolySolution, as_degrees, fit_order
from .polyquad import basis_for, gauss_rule, shifted_legendre, trial_points


@dataclass(frozen=True)
class InterpolationProblem:
    """A function on [a, b], smooth except at the listed interior points."""

    a: float
    b: float
    v: Callable
    discontinuities: tuple = ()

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"need a < b, got [{self.a}, {self.b}]")
        d = tuple(sorted(float(x) for x in self.discontinuities))
        if any(not self.a < x < self.b for x in d):
            raise ValueError("discontinuities must lie strictly inside (a, b)")
        object.__setattr__(self, "discontinuities", d)

    def pieces(self):
        edges = (self.a,) + self.discontinuities + (self.b,)
        return list(zip(edges[:-1], edges[1:]))

    def quadrature(self, npts):
        """Gauss points and weights on every smooth piece, in reference coordinates of [a, b]."""
        rule = gauss_rule(npts)
        k = self.b - self.a
        xs, ws = [], []
        for lo, hi in self.pieces():
            xs.append((lo - self.a + (hi - lo) * rule.points) / k)
            ws.append((hi - lo) / k * rule.weights)
        return np.concatenate(xs), np.concatenate(ws)


@dataclass(frozen=True)
class NodalPolynomial:
    """Polynomial on [a, b] given by its values at reference nodes."""

    a: float
    b: float
    points: np.ndarray
    values: np.ndarray

    @property
    def degree(self):
        return len(self.points) - 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        tau = (np.atleast_1d(x) - self.a) / (self.b - self.a)
        out = basis_for(self.points).values(tau) @ self.values
        return out if x.ndim else float(out[0])

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        tau = (np.atleast_1d(x) - self.a) / (self.b - self.a)
        out = basis_for(self.points).derivatives(tau) @ self.values / (self.b - self.a)
        return out if x.ndim else float(out[0])


def _as_problem(v, a, b, discontinuities):
    if isinstance(v, InterpolationProblem):
        return v
    return InterpolationProblem(float(a), float(b), v, tuple(discontinuities))


def _vectorized(v, x):
    vals = np.asarray(v(x), dtype=float)
    if vals.shape != x.shape:
        vals = np.array([float(v(xi)) for xi in x])
    return vals


def _constrained(prob, nodes, fixed, ntest, npts):
    """Values at ``nodes`` of the polynomial matching ``fixed`` (index -> value)
    and orthogonal to ``ntest`` shifted Legendre polynomials against v."""
    basis = basis_for(nodes)
    n = len(nodes)
    x, w = prob.quadrature(npts)
    vals = _vectorized(prob.v, prob.a + (prob.b - prob.a) * x)
    P = shifted_legendre(ntest, x)  # (R, ntest)
    M = P.T @ (w[:, None] * basis.values(x))  # (ntest, n)
    rhs = P.T @ (w * vals)
    c = np.zeros(n)
    free = [m for m in range(n) if m not in fixed]
    for m, val in fixed.items():
        c[m] = val
    if free:
        rhs = rhs - M[:, list(fixed)] @ np.array(list(fixed.values())) if fixed else rhs
        c[free] = np.linalg.solve(M[:, free], rhs)
    return NodalPolynomial(prob.a, prob.b, np.asarray(nodes), c)


def _npts(q, npts):
    return max(q + 1, npts if npts is not None else q + 8)


def interp_cg(q, v, a=0.0, b=1.0, discontinuities=(), npts=None) -> NodalPolynomial:
    """Degree-q polynomial matching v at a and b with error orthogonal to P^{q-2}."""
    if q < 1:
        raise ValueError(f"interp_cg needs q >= 1, got {q}")
    prob = _as_problem(v, a, b, discontinuities)
    ends = _vectorized(prob.v, np.array([prob.a, prob.b]))
    return _constrained(prob, trial_points("mcG", q), {0: ends[0], q: ends[1]}, q - 1, _npts(q, npts))


def interp_dg(q, v, a=0.0, b=1.0, discontinuities=(), npts=None) -> NodalPolynomial:
    """Degree-q polynomial matching v at b with error orthogonal to P^{q-1}."""
    if q < 0:
        raise ValueError(f"interp_dg needs q >= 0, got {q}")
    prob = _as_problem(v, a, b, discontinuities)
    vb = _vectorized(prob.v, np.array([prob.b]))[0]
    return _constrained(prob, trial_points("mdG", q), {q: vb}, q, _npts(q, npts))


def interp_cg_dual(q, v, a=0.0, b=1.0, discontinuities=(), npts=None) -> NodalPolynomial:
    """L2 projection of v onto P^{q-1}."""
    if q < 1:
        raise ValueError(f"interp_cg_dual needs q >= 1, got {q}")
    prob = _as_problem(v, a, b, discontinuities)
    return _constrained(prob, trial_points("mcG*", q), {}, q, _npts(q, npts))


def interp_dg_dual(q, v, a=0.0, b=1.0, discontinuities=(), npts=None) -> NodalPolynomial:
    """Degree-q polynomial matching v at a with error orthogonal to P^{q-1}."""
    if q < 0:
        raise ValueError(f"interp_dg_dual needs q >= 0, got {q}")
    prob = _as_problem(v, a, b, discontinuities)
    va = _vectorized(prob.v, np.array([prob.a]))[0]
    return _constrained(prob, trial_points("mdG*", q), {0: va}, q, _npts(q, npts))


OPERATORS = {
    "cG": interp_cg,
    "dG": interp_dg,
    "cG*": interp_cg_dual,
    "dG*": interp_dg_dual,
}


@dataclass
class InterpOrderStudy:
    steps: np.ndarray
    errors: np.ndarray
    fit: OrderFit

    @property
    def order(self):
        return self.fit.order


def measure_interp_order(operator, v, q, a=0.0, k0=1.0, levels=6, floor=1e-14, samples=201):
    """Sup-norm error of ``operator(q, v, [a, a + k])`` for k = k0 2^-m, m < levels, and its fitted order."""
    if levels < 5:
        raise ValueError("need at least 5 halvings")
    steps = k0 * 2.0 ** -np.arange(levels)
    errors = np.empty(levels)
    for m, k in enumerate(steps):
        p = operator(q, v, a, a + k)
        x = np.linspace(a, a + k, samples)
        errors[m] = np.max(np.abs(p(x) - _vectorized(v, x)))
    return InterpOrderStudy(steps, errors, fit_order(steps, errors, floor))


def interpolate_solution(u, partition, method, q, initial=None, npts=None) -> PiecewisePolySolution:
    """Element-wise interpolant of ``u`` (``u(t)`` returns shape (N, len(t))) in a primal trial space.

    Uses the cG interpolant for ``method='mcG'`` and the dG interpolant for
    ``'mdG'``, in the same nodal bases as the solvers.
    """
    op = {"mcG": interp_cg, "mdG": interp_dg}[method]
    N = partition.dimension
    degrees = as_degrees(q, N)
    values = []
    for i, nodes in enumerate(partition.components.nodes):
        comp = (lambda t, i=i: np.asarray(u(np.atleast_1d(t)))[i])
        values.append(np.array([op(degrees[i], comp, nodes[j], nodes[j + 1], npts=npts).values
                                for j in range(len(nodes) - 1)]))
    u0 = np.asarray(u(np.array([0.0])), dtype=float)[:, 0] if initial is None else np.asarray(initial, float)
    return PiecewisePolySolution(method, partition, degrees, tuple(values), u0)
