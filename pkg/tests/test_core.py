import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from madapt.core import (
    DomainError,
    OdeProblem,
    PartitionError,
    PiecewisePolySolution,
    build_partition,
    dump_solution,
    evaluate,
    fit_order,
    norm_lp,
    read_dump,
    uniform_partition,
)


def merged_nodes_oracle(steps, T):
    """All node times by brute force, as exact fractions."""
    nodes = set()
    for k in steps:
        k = Fraction(k).limit_denominator(10**6)
        n = Fraction(T) / k
        assert n.denominator == 1
        nodes.update(k * m for m in range(int(n) + 1))
    return sorted(nodes)


def sync_levels_oracle(steps, T):
    per = []
    for k in steps:
        k = Fraction(k).limit_denominator(10**6)
        per.append({k * m for m in range(int(Fraction(T) / k) + 1)})
    return sorted(set.intersection(*per))


def test_test6_partition():
    P = uniform_partition(0.25, [1, 1, 0.5, 0.5, 0.25, 0.25], 1.0)
    assert len(P.slabs) == 4
    assert all(abs(s.length - 0.25) < 1e-15 for s in P.slabs)
    assert [P.components.num_elements(i) for i in range(6)] == [4, 4, 8, 8, 16, 16]
    assert P.alpha == pytest.approx(0.25)


def test_single_element_partition():
    P = build_partition([2.0], 2.0)
    assert len(P.slabs) == 1
    assert P.components.num_elements(0) == 1
    assert P.components.nodes[0][-1] == 2.0


def test_incommensurate_steps_share_one_slab():
    T = 1.0
    P = build_partition([T / 2, T / 3], T)
    assert [(s.t0, s.t1) for s in P.slabs] == [(0.0, 1.0)]
    assert P.alpha == pytest.approx(2 / 3)
    levels = sync_levels_oracle([Fraction(1, 2), Fraction(1, 3)], 1)
    assert levels == [0, 1]
    merged = merged_nodes_oracle([Fraction(1, 2), Fraction(1, 3)], 1)
    np.testing.assert_allclose(P.components.all_nodes(), [float(x) for x in merged], atol=1e-15)


def test_internal_nodes():
    P = build_partition([0.5, 0.25], 1.0)
    slab = P.slabs[0]
    np.testing.assert_allclose(slab.internal_nodes(0, 0), [0.25])
    assert len(slab.internal_nodes(1, 0)) == 0


def test_non_tiling_step_is_rejected():
    with pytest.raises(PartitionError, match="component 1"):
        build_partition([0.5, 0.3], 1.0)


def test_nonpositive_step_is_rejected():
    with pytest.raises(PartitionError):
        build_partition([0.0], 1.0)


def test_callable_step_rule():
    P = build_partition(lambda t: [0.5, 0.25] if t < 0.5 else [0.25, 0.25], 1.0)
    assert [P.components.num_elements(i) for i in range(2)] == [3, 4]
    assert P.alpha == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1.0, 0.5, 0.25, 0.2, 0.1]),
       st.lists(st.sampled_from([1, Fraction(1, 2), Fraction(1, 3), Fraction(1, 4), Fraction(2, 3)]),
                min_size=1, max_size=4),
       st.sampled_from([1.0, 2.0, 3.0]))
def test_partition_tiles_every_slab(k0, ratios, T):
    steps = [k0 * float(r) for r in ratios]
    try:
        P = build_partition(steps, T)
    except PartitionError:
        return
    for i, nodes in enumerate(P.components.nodes):
        assert nodes[0] == 0.0 and nodes[-1] == T
        assert np.all(np.diff(nodes) > 0)
    covered = 0.0
    for slab in P.slabs:
        assert slab.t0 == covered or abs(slab.t0 - covered) < 1e-15
        covered = slab.t1
        for i in range(P.dimension):
            assert np.any(np.abs(P.components.nodes[i] - slab.t0) < 1e-14)
            assert np.any(np.abs(P.components.nodes[i] - slab.t1) < 1e-14)
    assert covered == T


def linear_mcg_solution(a_val, b_val):
    P = build_partition([1.0], 1.0)
    return PiecewisePolySolution("mcG", P, (1,), (np.array([[a_val, b_val]]),), np.array([a_val]))


def test_evaluate_examples():
    U = linear_mcg_solution(1.0, 3.0)
    assert evaluate(U, 0, 0.5) == pytest.approx(2.0)
    assert evaluate(U, 0, 0.0) == 1.0
    P = build_partition([0.5], 1.0)
    V = PiecewisePolySolution("mdG", P, (0,), (np.array([[2.0], [5.0]]),), np.array([1.0]))
    assert evaluate(V, 0, 0.5) == 2.0  # left limit at the node
    assert evaluate(V, 0, 1.0) == 5.0
    assert evaluate(V, 0, 0.0) == 1.0
    assert V.evaluate_component(0, np.array([0.5]), side="right")[0] == 5.0


def test_evaluate_outside_domain():
    U = linear_mcg_solution(1.0, 3.0)
    with pytest.raises(DomainError):
        evaluate(U, 0, 1.5)
    with pytest.raises(DomainError):
        evaluate(U, 0, -0.1)


def test_values_are_read_only():
    U = linear_mcg_solution(1.0, 3.0)
    with pytest.raises(ValueError):
        U.values[0][0, 0] = 2.0


@pytest.mark.parametrize("v,p,expected", [((3, 4), 2, 5.0), ((1, -1, 1), 1, 3.0), ((1, -2), np.inf, 2.0)])
def test_norm_examples(v, p, expected):
    assert norm_lp(v, p) == expected


def test_norm_rejects_unknown_p():
    with pytest.raises(ValueError):
        norm_lp([1.0], 3)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8))
def test_norm_ordering(v):
    assert norm_lp(v, np.inf) <= norm_lp(v, 2) * (1 + 1e-12) + 1e-300
    assert norm_lp(v, 2) <= norm_lp(v, 1) * (1 + 1e-12) + 1e-300


def test_dump_round_trip():
    P = build_partition([0.5, 0.25], 1.0)
    vals = (np.arange(4.0).reshape(2, 2), np.arange(8.0).reshape(4, 2) / 3)
    U = PiecewisePolySolution("mcG", P, (1, 1), vals, np.zeros(2))
    text = dump_solution(U)
    recs = read_dump(text)
    assert len(recs) == 6
    method, i, j, a, b, q, coef = recs[3]
    assert (method, i, j, q) == ("mcG", 1, 1, 1)
    assert (a, b) == (0.25, 0.5)
    np.testing.assert_array_equal(coef, vals[1][1])
    buf = io.StringIO()
    dump_solution(U, buf)
    assert buf.getvalue() == text


def test_problem_validation():
    with pytest.raises(ValueError):
        OdeProblem(lambda u, t: -u, [], 1.0)
    with pytest.raises(ValueError):
        OdeProblem(lambda u, t: -u, [1.0], 0.0)
    with pytest.raises(ValueError):
        OdeProblem(lambda u, t: np.full_like(u, np.nan), [1.0], 1.0)


def test_fd_jacobian_fallback():
    prob = OdeProblem(lambda u, t: np.array([u[0] * u[1], -u[0]]), [1.0, 2.0], 1.0)
    J = prob.jac_batch(np.array([[1.0], [2.0]]), np.array([0.0]))[0]
    np.testing.assert_allclose(J, [[2.0, 1.0], [-1.0, 0.0]], atol=1e-7)


def test_fit_order():
    ks = 0.1 * 2.0 ** -np.arange(5)
    fit = fit_order(ks, 3 * ks**2, 1e-13)
    assert fit.order == pytest.approx(2.0)
    assert fit.window == (0, 1, 2, 3, 4)
    bad = fit_order(ks, [1e-12, 1e-14, 1e-15, 1e-15, 1e-15], 1e-13)
    assert not bad.valid and bad.window == (0,)
