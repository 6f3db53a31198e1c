"""Problems, per-component partitions, time slabs and piecewise polynomial solutions."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .polyquad import basis_for, trial_points


class MadaptError(Exception):
    """Base class for errors raised by this package."""


class PartitionError(MadaptError, ValueError):
    pass


class DomainError(MadaptError, ValueError):
    pass


class NumericalError(MadaptError, RuntimeError):
    """Non-finite values or failed iterations."""


@dataclass(frozen=True)
class OdeProblem:
    """Initial value problem ``u' = f(u, t)`` on (0, T].

    ``rhs(u, t)`` must accept ``u`` of shape (N,) and return shape (N,). With
    ``vectorized=True`` it must also accept ``u`` of shape (N, P) with ``t`` of
    shape (P,) and return (N, P); the same applies to ``jacobian`` which then
    returns (P, N, N).
    """

    rhs: Callable
    u0: np.ndarray
    T: float
    jacobian: Optional[Callable] = None
    lipschitz_hint: Optional[float] = None
    vectorized: bool = False
    exact: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        u0 = np.array(self.u0, dtype=float).reshape(-1)
        if u0.size == 0:
            raise ValueError("problem dimension must be positive")
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        u0.flags.writeable = False
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "T", float(self.T))
        f0 = np.asarray(self.rhs(u0.copy(), 0.0), dtype=float)
        if f0.shape != u0.shape or not np.all(np.isfinite(f0)):
            raise ValueError(f"rhs(u0, 0) must be finite with shape {u0.shape}, got {f0!r}")

    @property
    def dimension(self) -> int:
        return self.u0.size

    def f_batch(self, u, t):
        """Evaluate ``f`` at columns of ``u`` (N, P) and times ``t`` (P,)."""
        if self.vectorized:
            return np.asarray(self.rhs(u, t), dtype=float)
        out = np.empty_like(u, dtype=float)
        for s in range(u.shape[1]):
            out[:, s] = self.rhs(u[:, s], float(t[s]))
        return out

    def jac_batch(self, u, t):
        """Jacobians at columns of ``u``, shape (P, N, N); finite differences if none given."""
        if self.jacobian is None:
            return np.array([fd_jacobian(self.rhs, u[:, s], float(t[s])) for s in range(u.shape[1])])
        if self.vectorized:
            return np.asarray(self.jacobian(u, t), dtype=float)
        return np.array([self.jacobian(u[:, s], float(t[s])) for s in range(u.shape[1])], dtype=float)


def fd_jacobian(rhs, u, t):
    """Central differences with step ``1e-7 * (1 + |u_l|)``."""
    u = np.asarray(u, dtype=float)
    n = u.size
    jac = np.empty((n, n))
    for col in range(n):
        h = 1e-7 * (1.0 + abs(u[col]))
        up, um = u.copy(), u.copy()
        up[col] += h
        um[col] -= h
        jac[:, col] = (np.asarray(rhs(up, t)) - np.asarray(rhs(um, t))) / (2 * h)
    return jac


def norm_lp(v, p=2):
    v = np.asarray(v, dtype=float)
    if p == 1:
        return float(np.sum(np.abs(v)))
    if p == 2:
        # scale first so tiny or huge entries neither underflow nor overflow
        m = float(np.max(np.abs(v))) if v.size else 0.0
        return 0.0 if m == 0.0 else m * float(np.sqrt(np.sum((v / m) ** 2)))
    if p in (np.inf, "inf"):
        return float(np.max(np.abs(v))) if v.size else 0.0
    raise ValueError(f"unsupported norm p={p}")


@dataclass(frozen=True)
class TimeSlab:
    """Elements between two synchronized levels ``t0 < t1``.

    Component ``i`` takes ``counts[i]`` equal steps of length ``K / counts[i]``.
    ``first[i]`` is the global index of its first element in the slab.
    """

    index: int
    t0: float
    t1: float
    counts: tuple
    first: tuple

    @property
    def length(self) -> float:
        return self.t1 - self.t0

    def node(self, i, p):
        """Time of the p-th node (0..counts[i]) of component i inside the slab."""
        m = self.counts[i]
        if p == 0:
            return self.t0
        if p == m:
            return self.t1
        return self.t0 + p * (self.t1 - self.t0) / m

    def elements(self):
        """All (i, j) pairs with j the global element index."""
        return [(i, self.first[i] + p) for i in range(len(self.counts)) for p in range(self.counts[i])]

    def internal_nodes(self, i, j):
        """Nodes of other components strictly inside element (i, j)."""
        p = j - self.first[i]
        mi = self.counts[i]
        out = set()
        for l, ml in enumerate(self.counts):
            if l == i:
                continue
            for r in range(1, ml):
                # p/mi < r/ml < (p+1)/mi in exact integer arithmetic
                if p * ml < r * mi < (p + 1) * ml:
                    out.add(self.node(l, r))
        return tuple(sorted(out))

    def step_ratio(self) -> float:
        return min(self.counts) / max(self.counts)


@dataclass(frozen=True)
class ComponentPartition:
    """Per-component node sequences ``0 = t_{i,0} < ... < t_{i,M_i} = T``."""

    nodes: tuple
    T: float

    @property
    def dimension(self):
        return len(self.nodes)

    def num_elements(self, i):
        return len(self.nodes[i]) - 1

    def steps(self, i):
        return np.diff(self.nodes[i])

    def interval(self, i, j):
        """Interval of element j (0-based) of component i."""
        return float(self.nodes[i][j]), float(self.nodes[i][j + 1])

    def all_nodes(self):
        return np.unique(np.concatenate(self.nodes))


@dataclass(frozen=True)
class Partition:
    """A component partition together with its time slabs."""

    components: ComponentPartition
    slabs: tuple
    alpha: float

    @property
    def T(self):
        return self.components.T

    @property
    def dimension(self):
        return self.components.dimension

    def __iter__(self):
        # allows ``partition, slabs = build_partition(...)``
        return iter((self.components, list(self.slabs)))


def _rationalize(x, what):
    frac = Fraction(x).limit_denominator(10**6)
    if abs(float(frac) - x) > 1e-12 * max(1.0, abs(x)):
        raise PartitionError(f"{what}: step ratio {x!r} is not a rational number with a small denominator")
    return frac


def _slab_counts(steps, remaining, slab_index):
    steps = [float(k) for k in steps]
    for i, k in enumerate(steps):
        if not (k > 0 and math.isfinite(k)):
            raise PartitionError(f"component {i}, slab {slab_index}: step must be positive, got {k}")
    kmax = max(steps)
    ratios = [_rationalize(k / kmax, f"component {i}, slab {slab_index}") for i, k in enumerate(steps)]
    num = 1
    den = 0
    for r in ratios:
        num = num * r.numerator // math.gcd(num, r.numerator)
        den = math.gcd(den, r.denominator)
    K = kmax * num / den
    if K > remaining * (1 + 1e-12):
        # the last slab must end at T; shrink to the remaining length if all components still tile it
        K = remaining
    counts = []
    for i, k in enumerate(steps):
        m = K / k
        mr = round(m)
        if mr < 1 or abs(m - mr) > 1e-9 * max(1.0, m):
            raise PartitionError(
                f"component {i}: step {k} does not divide slab {slab_index} of length {K}"
            )
        counts.append(int(mr))
    return K, tuple(counts)


def build_partition(steps, T: float) -> Partition:
    """Build per-component nodes and time slabs.

    ``steps`` is either a sequence with one constant step per component,
    or a callable ``rule(t)`` returning the steps for the slab starting at
    ``t``. Within a slab every component takes equal steps whose ratios are
    rational; the slab length is their least common multiple.
    """
    T = float(T)
    if not T > 0:
        raise PartitionError(f"final time must be positive, got {T}")
    rule = steps if callable(steps) else (lambda t, s=tuple(steps): s)
    slabs = []
    t0 = 0.0
    n = 0
    first = None
    per_comp = None
    while T - t0 > 1e-12 * T:
        K, counts = _slab_counts(rule(t0), T - t0, n)
        if per_comp is None:
            per_comp = [[0.0] for _ in counts]
            first = [0] * len(counts)
        elif len(counts) != len(per_comp):
            raise PartitionError(f"slab {n}: rule returned {len(counts)} steps, expected {len(per_comp)}")
        t1 = T if abs(T - (t0 + K)) <= 1e-12 * T else t0 + K
        slab = TimeSlab(n, t0, t1, counts, tuple(first))
        for i, m in enumerate(counts):
            per_comp[i].extend(slab.node(i, p) for p in range(1, m + 1))
            first[i] += m
        slabs.append(slab)
        t0 = t1
        n += 1
    nodes = []
    for seq in per_comp:
        arr = np.array(seq)
        arr.flags.writeable = False
        nodes.append(arr)
    alpha = min(s.step_ratio() for s in slabs)
    return Partition(ComponentPartition(tuple(nodes), T), tuple(slabs), alpha)


def uniform_partition(k0, ratios, T) -> Partition:
    """Constant steps ``k0 * ratios[i]`` per component."""
    return build_partition([k0 * r for r in ratios], T)


@dataclass(frozen=True)
class Element:
    i: int
    j: int
    t_left: float
    t_right: float
    q: int
    coefficients: np.ndarray
    left_limit: Optional[float]


@dataclass(frozen=True)
class PiecewisePolySolution:
    """Element-wise polynomials stored as nodal values.

    ``values[i]`` has shape (M_i, n_i): nodal values of component i on each
    element in the basis given by :func:`polyquad.trial_points` for
    ``method``. Evaluation is left-continuous; ``initial`` is returned at t=0.
    """

    method: str
    partition: Partition
    degrees: tuple
    values: tuple
    initial: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for v in self.values:
            v.flags.writeable = False

    @property
    def dimension(self):
        return len(self.values)

    @property
    def T(self):
        return self.partition.T

    def points(self, i):
        return trial_points(self.method, self.degrees[i])

    def element(self, i, j) -> Element:
        a, b = self.partition.components.interval(i, j)
        left = None
        if self.method in ("mcG", "mdG"):
            left = float(self.initial[i]) if j == 0 else float(self.evaluate_component(i, np.array([a]))[0])
        return Element(i, j, a, b, self.degrees[i], self.values[i][j], left)

    def evaluate_component(self, i, t, side="left", derivative=False):
        """Vectorized evaluation of component i. ``side='right'`` gives right limits at nodes."""
        nodes = self.partition.components.nodes[i]
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0) or np.any(t > self.T * (1 + 1e-14)):
            raise DomainError(f"evaluation time outside [0, {self.T}]")
        if side == "left":
            j = np.searchsorted(nodes, t, side="left") - 1
        else:
            j = np.searchsorted(nodes, t, side="right") - 1
            j = np.minimum(j, len(nodes) - 2)
        at_zero = j < 0
        jj = np.clip(j, 0, len(nodes) - 2)
        a = nodes[jj]
        k = nodes[jj + 1] - a
        tau = np.clip((t - a) / k, 0.0, 1.0)
        basis = basis_for(self.points(i))
        mat = basis.derivatives(tau) / k[:, None] if derivative else basis.values(tau)
        out = np.einsum("ps,ps->p", mat, self.values[i][jj])
        if np.any(at_zero):
            out[at_zero] = 0.0 if derivative else self.initial[i]
        return out

    def evaluate_all(self, t, side="left"):
        """Values of all components at times ``t``, shape (N, len(t))."""
        return np.array([self.evaluate_component(i, t, side) for i in range(self.dimension)])

    def __call__(self, t):
        return self.evaluate_all(np.atleast_1d(t))[:, 0] if np.isscalar(t) else self.evaluate_all(t)

    def final_value(self):
        return np.array([v[-1, -1] for v in self.values]) if self.method in ("mcG", "mdG") else \
            self.evaluate_all(np.array([self.T]))[:, 0]

    def node_jumps(self, i):
        """Jumps U(t+) - U(t-) at the internal nodes of component i."""
        nodes = self.partition.components.nodes[i][1:-1]
        if len(nodes) == 0:
            return np.empty(0)
        return self.evaluate_component(i, nodes, "right") - self.evaluate_component(i, nodes, "left")


def evaluate(solution: PiecewisePolySolution, i: int, t: float) -> float:
    """Left-continuous value of component ``i`` at time ``t`` (``t=0`` gives the initial value)."""
    return float(solution.evaluate_component(i, np.array([t]))[0])


DUMP_COLUMNS = ("method", "i", "j", "t_left", "t_right", "q", "coefficients...")


def dump_solution(solution: PiecewisePolySolution, fh=None) -> str:
    """One comma separated record per element: method,i,j,t_left,t_right,q,c_0,...,c_q."""
    out = io.StringIO() if fh is None else fh
    nodes = solution.partition.components.nodes
    for i, vals in enumerate(solution.values):
        for j, coef in enumerate(vals):
            fields = [solution.method, str(i), str(j), repr(float(nodes[i][j])), repr(float(nodes[i][j + 1])),
                      str(solution.degrees[i])] + [repr(float(c)) for c in coef]
            out.write(",".join(fields) + "\n")
    return out.getvalue() if fh is None else ""


def read_dump(text: str):
    """Parse a dump back into a list of records (method, i, j, t_left, t_right, q, coefficients)."""
    records = []
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split(",")
        records.append((parts[0], int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4]),
                        int(parts[5]), np.array([float(c) for c in parts[6:]])))
    return records


@dataclass(frozen=True)
class OrderFit:
    """Least-squares slope of log(error) against log(step) over the levels above a floor."""

    order: Optional[float]
    window: tuple  # indices of the levels used

    @property
    def valid(self):
        return self.order is not None


def fit_order(steps, errors, floor) -> OrderFit:
    """Fit ``error ~ C step^p`` using only the levels with ``error >= floor``.

    Fewer than two usable levels give an invalid fit (``order`` is None).
    """
    steps = np.asarray(steps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = np.flatnonzero(np.isfinite(errors) & (errors >= floor))
    if len(keep) < 2:
        return OrderFit(None, tuple(int(k) for k in keep))
    slope = np.polyfit(np.log(steps[keep]), np.log(errors[keep]), 1)[0]
    return OrderFit(float(slope), tuple(int(k) for k in keep))


def as_degrees(q, dimension) -> tuple:
    if isinstance(q, (int, np.integer)):
        return (int(q),) * dimension
    q = tuple(int(x) for x in q)
    if len(q) != dimension:
        raise ValueError(f"need {dimension} degrees, got {len(q)}")
    return q
