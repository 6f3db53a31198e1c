"""Per-slab index layout and precomputed matrices shared by the primal and dual solvers.

Slab state vector ``X`` is the concatenation over components of
``x_i = [left value, dofs of element 0, dofs of element 1, ...]`` where the
left value is U_i at the slab start (mcG) or its left limit (mdG). Element p
of component i owns ``nd_i`` dofs (q_i for mcG, q_i + 1 for mdG).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .polyquad import (
    QuadratureRule,
    basis_for,
    fixed_point_weights,
    gauss_rule,
    method_quadrature,
    trial_points,
)


@dataclass
class ElementLayout:
    i: int
    p: int
    left: int
    dofs: np.ndarray
    cols: np.ndarray  # [left] + dofs: local columns of the Galerkin matrices
    nodal: np.ndarray  # indices holding the element's nodal values
    rel_left: Fraction
    rel_right: Fraction
    rel_points: np.ndarray  # quadrature points as fractions of the slab
    tau: np.ndarray
    E: np.ndarray  # (N * P, nX): values of all components at the quadrature points
    W: np.ndarray  # (nd, P) fixed-point weight matrix


def local_matrices(method, q, test_points, rule):
    """Galerkin matrices of one element in reference coordinates.

    Returns ``A`` (ntest, 1 + nd) acting on ``[left, dofs]`` and ``B`` (ntest, P)
    with ``B[n, s] = omega_s v_n(tau_s)`` so that the element residual reads
    ``A @ x[cols] - k * B @ f_i``.
    """
    trial = basis_for(trial_points(method, q))
    test = basis_for(test_points)
    ntest = len(test)
    g = gauss_rule(q + 2)
    stiff = np.einsum("s,sn,sm->nm", g.weights, test.values(g.points), trial.derivatives(g.points))
    B = test.values(rule.points).T * rule.weights[None, :]
    if method == "mcG":
        A = stiff
    else:
        v0 = test.values(0.0)[0]
        A = np.empty((ntest, q + 2))
        A[:, 0] = -v0
        A[:, 1:] = stiff + np.outer(v0, trial.values(0.0)[0])
    return A, B


class SlabLayout:
    """Index layout of one slab pattern (component counts and degrees)."""

    def __init__(self, method, counts, degrees, rules):
        self.method = method
        self.counts = tuple(counts)
        self.degrees = tuple(degrees)
        N = len(counts)
        self.N = N
        nd = [q if method == "mcG" else q + 1 for q in degrees]
        self.nd = nd
        self.offsets = np.cumsum([0] + [1 + m * d for m, d in zip(counts, nd)])[:-1]
        self.size = int(sum(1 + m * d for m, d in zip(counts, nd)))
        self.first_index = [int(o) for o in self.offsets]
        self.last_index = [int(o) + m * d for o, m, d in zip(self.offsets, counts, nd)]
        self.elements = []
        for i in range(N):
            q = degrees[i]
            rule = rules[i]
            W = fixed_point_weights(method, q).quadrature_matrix(rule)
            for p in range(counts[i]):
                left = int(self.offsets[i]) + p * nd[i]
                dofs = np.arange(left + 1, left + 1 + nd[i])
                cols = np.concatenate([[left], dofs])
                nodal = cols if method == "mcG" else dofs
                rel_points = (p + rule.points) / counts[i]
                E = self._evaluation_matrix(rel_points)
                self.elements.append(ElementLayout(
                    i, p, left, dofs, cols, nodal,
                    Fraction(p, counts[i]), Fraction(p + 1, counts[i]),
                    rel_points, rule.points, E, W))
        self.forward_order = sorted(range(len(self.elements)),
                                    key=lambda e: (self.elements[e].rel_right, self.elements[e].i))
        self.backward_order = sorted(range(len(self.elements)),
                                     key=lambda e: (-self.elements[e].rel_left, self.elements[e].i))
        self._jacobi = None

    def element_nodal_index(self, l, p):
        d = self.nd[l]
        left = int(self.offsets[l]) + p * d
        if self.method == "mcG":
            return np.arange(left, left + d + 1)
        return np.arange(left + 1, left + 1 + d)

    def _evaluation_matrix(self, rel_points):
        """Rows give every component's left-continuous value at the points."""
        P = len(rel_points)
        E = np.zeros((self.N, P, self.size))
        for l in range(self.N):
            m = self.counts[l]
            basis = basis_for(trial_points(self.method, self.degrees[l]))
            for s, r in enumerate(rel_points):
                x = r * m
                near = round(x)
                if abs(x - near) < 1e-12:
                    if near == 0:
                        E[l, s, self.offsets[l]] = 1.0
                        continue
                    p, tau = near - 1, 1.0
                else:
                    p = int(np.floor(x))
                    tau = x - p
                E[l, s, self.element_nodal_index(l, p)] = basis.values(tau)[0]
        return E.reshape(self.N * P, self.size)

    def jacobi_operators(self):
        """Stacked operators for a vectorized Jacobi sweep over the whole slab."""
        if self._jacobi is None:
            Es = [e.E.reshape(self.N, -1, self.size) for e in self.elements]
            E_all = np.concatenate(Es, axis=1)
            comp = np.concatenate([np.full(len(e.tau), e.i) for e in self.elements])
            rel = np.concatenate([e.rel_points for e in self.elements])
            dofs = np.concatenate([e.dofs for e in self.elements])
            lefts = np.concatenate([np.full(len(e.dofs), e.left) for e in self.elements])
            # block-diagonal weights, scaled by the element's fraction of the slab
            H = np.zeros((len(dofs), len(comp)))
            r0 = c0 = 0
            for e in self.elements:
                nd, P = e.W.shape
                H[r0:r0 + nd, c0:c0 + P] = e.W / self.counts[e.i]
                r0 += nd
                c0 += P
            self._jacobi = (E_all, comp, rel, dofs, lefts, H)
        return self._jacobi

    def gather(self, solution, slab):
        """Slab state vector of a primal solution (same method and degrees)."""
        X = np.empty(self.size)
        for i in range(self.N):
            j0 = slab.first[i]
            vals = solution.values[i]
            left = solution.initial[i] if j0 == 0 else vals[j0 - 1, -1]
            X[self.offsets[i]] = left
            block = vals[j0:j0 + self.counts[i]]
            if self.method == "mcG":
                block = block[:, 1:]
            X[self.offsets[i] + 1:self.offsets[i] + 1 + block.size] = block.reshape(-1)
        return X


@lru_cache(maxsize=256)
def _layout_cached(method, counts, degrees, rule_key):
    rules = [method_quadrature(method, q) if r is None else r.rule for q, r in zip(degrees, rule_key)]
    return SlabLayout(method, counts, degrees, rules)


@dataclass(frozen=True)
class _RuleKey:
    rule: QuadratureRule

    def __hash__(self):
        return hash((tuple(self.rule.points), tuple(self.rule.weights)))

    def __eq__(self, other):
        return (np.array_equal(self.rule.points, other.rule.points)
                and np.array_equal(self.rule.weights, other.rule.weights))


def get_layout(method, counts, degrees, quadrature=None) -> SlabLayout:
    key = tuple(None if quadrature is None else _RuleKey(quadrature) for _ in degrees)
    return _layout_cached(method, tuple(counts), tuple(degrees), key)
