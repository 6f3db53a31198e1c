"""Quadrature rules, Lagrange bases and fixed-point weight functions on [0, 1].

All rules live on the reference interval [0, 1]; an element (a, b] is mapped
by ``tau = (t - a) / (b - a)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights on [0, 1] with the degree of polynomials integrated exactly."""

    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int
    name: str = ""

    def __len__(self):
        return len(self.points)

    def integrate(self, fvals):
        return np.dot(self.weights, fvals)

    def to_text(self):
        lines = [f"# {self.name} n={len(self)} exact to degree {self.exactness_degree}"]
        for x, w in zip(self.points, self.weights):
            lines.append(f"{x:.17g} {w:.17g}")
        return "\n".join(lines)


def _jacobi(n, alpha, beta, x):
    """Return P_n^(alpha, beta)(x) and its derivative by the three-term recurrence."""
    x = np.asarray(x, dtype=float)

    def value(m, a, b):
        p0 = np.ones_like(x)
        if m == 0:
            return p0
        p1 = (a + 1) + (a + b + 2) * (x - 1) / 2
        for k in range(1, m):
            c = 2 * k + a + b
            num = (c + 1) * ((c + 2) * c * x + a * a - b * b) * p1 - 2 * (k + a) * (k + b) * (c + 2) * p0
            p0, p1 = p1, num / (2 * (k + 1) * (k + a + b + 1) * c)
        return p1

    p = value(n, alpha, beta)
    dp = np.zeros_like(x) if n == 0 else 0.5 * (n + alpha + beta + 1) * value(n - 1, alpha + 1, beta + 1)
    return p, dp


def _jacobi_roots(n, alpha, beta):
    """Roots of P_n^(alpha, beta) on [-1, 1]: Golub-Welsch eigenvalues, then Newton polish."""
    if n == 0:
        return np.empty(0)
    k = np.arange(n, dtype=float)
    ab = alpha + beta
    diag = np.empty(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        diag[:] = (beta**2 - alpha**2) / ((2 * k + ab) * (2 * k + ab + 2))
    diag[0] = (beta - alpha) / (ab + 2)
    k = k[1:]
    off = np.sqrt(
        4 * k * (k + alpha) * (k + beta) * (k + ab)
        / ((2 * k + ab) ** 2 * (2 * k + ab + 1) * (2 * k + ab - 1))
    )
    jac = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    x = np.sort(np.linalg.eigvalsh(jac))
    for _ in range(10):
        p, dp = _jacobi(n, alpha, beta, x)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) < 1e-16:
            break
    return x


def _legendre(n, x):
    return _jacobi(n, 0.0, 0.0, x)[0]


@lru_cache(maxsize=None)
def gauss_rule(n: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``n`` points, exact to degree 2n-1."""
    if n < 1:
        raise ValueError(f"Gauss rule needs n >= 1, got {n}")
    x = _jacobi_roots(n, 0.0, 0.0)
    _, dp = _jacobi(n, 0.0, 0.0, x)
    w = 2.0 / ((1 - x**2) * dp**2)
    return _frozen_rule((x + 1) / 2, w / 2, 2 * n - 1, "gauss")


@lru_cache(maxsize=None)
def lobatto_rule(n: int) -> QuadratureRule:
    """Gauss-Lobatto rule with ``n`` points including 0 and 1, exact to degree 2n-3."""
    if n < 2:
        raise ValueError(f"Lobatto rule needs n >= 2, got {n}")
    x = np.concatenate([[-1.0], _jacobi_roots(n - 2, 1.0, 1.0), [1.0]])
    w = 2.0 / (n * (n - 1) * _legendre(n - 1, x) ** 2)
    return _frozen_rule((x + 1) / 2, w / 2, 2 * n - 3, "lobatto")


@lru_cache(maxsize=None)
def radau_rule(n: int) -> QuadratureRule:
    """Right-endpoint Gauss-Radau rule with ``n`` points (last point is 1), exact to degree 2n-2."""
    if n < 1:
        raise ValueError(f"Radau rule needs n >= 1, got {n}")
    xi = _jacobi_roots(n - 1, 1.0, 0.0)
    wi = (1 + xi) / (n**2 * _legendre(n - 1, xi) ** 2)
    x = np.concatenate([xi, [1.0]])
    w = np.concatenate([wi, [2.0 / n**2]])
    return _frozen_rule((x + 1) / 2, w / 2, 2 * n - 2, "radau")


@lru_cache(maxsize=None)
def left_radau_rule(n: int) -> QuadratureRule:
    """Mirror image of :func:`radau_rule`; its first point is 0."""
    r = radau_rule(n)
    return _frozen_rule(1.0 - r.points[::-1], r.weights[::-1], r.exactness_degree, "left-radau")


def _frozen_rule(points, weights, degree, name):
    points = np.array(points, dtype=float)
    weights = np.array(weights, dtype=float)
    points.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(points, weights, degree, name)


class LagrangeBasis:
    """Cardinal polynomial basis on distinct points of [0, 1].

    Basis polynomials are stored as Legendre series on [0, 1], which stays
    well conditioned for the point sets used here (up to a dozen points).
    """

    def __init__(self, points):
        points = np.asarray(points, dtype=float)
        if points.ndim != 1 or len(points) == 0:
            raise ValueError("need a non-empty 1-d array of points")
        if len(np.unique(points)) != len(points):
            raise ValueError(f"duplicate interpolation points: {points}")
        self.points = points
        self.degree = len(points) - 1
        vander = L.legvander(2 * points - 1, self.degree)
        self._coef = np.linalg.solve(vander, np.eye(len(points)))
        self._dcoef = 2 * L.legder(self._coef, axis=0) if self.degree > 0 else np.zeros((1, 1))

    def __len__(self):
        return len(self.points)

    def values(self, tau):
        """Matrix ``V[r, s] = L_s(tau_r)``."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        return L.legvander(2 * tau - 1, self.degree) @ self._coef

    def derivatives(self, tau):
        """Matrix ``D[r, s] = L_s'(tau_r)`` (derivative in tau)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        if self.degree == 0:
            return np.zeros((len(tau), 1))
        return L.legvander(2 * tau - 1, self.degree - 1) @ self._dcoef


def lagrange_basis(points) -> LagrangeBasis:
    return LagrangeBasis(points)


@lru_cache(maxsize=None)
def _cached_basis(points: tuple) -> LagrangeBasis:
    return LagrangeBasis(np.array(points))


def basis_for(points) -> LagrangeBasis:
    """Cached :class:`LagrangeBasis` for a reference point set."""
    return _cached_basis(tuple(float(p) for p in points))


def shifted_legendre(n, tau):
    """Values of P_0..P_{n-1} mapped to [0, 1], shape (len(tau), n)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if n == 0:
        return np.zeros((len(tau), 0))
    return L.legvander(2 * tau - 1, n - 1)


def trial_points(method: str, q: int) -> np.ndarray:
    """Nodal points of the element basis for each method tag."""
    if method == "mcG":
        return lobatto_rule(q + 1).points
    if method == "mdG":
        return radau_rule(q + 1).points
    if method == "mcG*":
        return gauss_rule(q).points
    if method == "mdG*":
        return left_radau_rule(q + 1).points
    raise ValueError(f"unknown method tag {method!r}")


def method_quadrature(method: str, q: int) -> QuadratureRule:
    """Default quadrature: Lobatto with q+1 points for mcG, Radau with q+1 points for mdG."""
    if method == "mcG":
        return lobatto_rule(q + 1)
    if method == "mdG":
        return radau_rule(q + 1)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class WeightFunctionSet:
    """Weight polynomials w_n on [0, 1], one per degree of freedom of an element.

    A degree of freedom satisfies ``xi_n = U(left) + k * int_0^1 w_n(tau) f dtau``.
    """

    method: str
    q: int
    nodes: np.ndarray
    polys: tuple

    def __call__(self, tau):
        """Matrix ``w[n, r] = w_n(tau_r)``."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        return np.array([p(tau) for p in self.polys])

    def quadrature_matrix(self, rule: QuadratureRule) -> np.ndarray:
        """``W[n, s] = omega_s * w_n(tau_s)`` for a fixed-point step with ``rule``."""
        return self(rule.points) * rule.weights[None, :]


@lru_cache(maxsize=None)
def fixed_point_weights(method: str, q: int) -> WeightFunctionSet:
    """Weight functions obtained by inverting the local Galerkin matrix.

    For mcG(q) the unknowns are the values at the Lobatto nodes tau_1..tau_q
    and the test space is P^{q-1}; for mdG(q) the unknowns are the values at
    the q+1 right Radau nodes and the test space is P^q with the jump term.
    """
    if method == "mcG":
        if q < 1:
            raise ValueError(f"mcG needs q >= 1, got {q}")
        ntest = q
    elif method == "mdG":
        if q < 0:
            raise ValueError(f"mdG needs q >= 0, got {q}")
        ntest = q + 1
    else:
        raise ValueError(f"unknown method {method!r}")

    nodes = trial_points(method, q)
    basis = basis_for(nodes)
    g = gauss_rule(q + 2)
    dphi = basis.derivatives(g.points)
    ptest = shifted_legendre(ntest, g.points)
    # rows: test functions p_l, columns: trial basis L_m
    mat = np.einsum("s,sl,sm->lm", g.weights, ptest, dphi)
    if method == "mcG":
        mat = mat[:, 1:]
    else:
        mat = mat + np.outer(shifted_legendre(ntest, 0.0)[0], basis.values(0.0)[0])
    assert abs(np.linalg.det(mat)) > 1e-12, "singular local Galerkin matrix"
    inv = np.linalg.inv(mat)
    polys = tuple(L.Legendre(inv[n], domain=[0, 1]) for n in range(ntest))
    dof_nodes = nodes[1:] if method == "mcG" else nodes
    return WeightFunctionSet(method, q, np.array(dof_nodes), polys)
