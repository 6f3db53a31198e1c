import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from madapt.core import DomainError, NumericalError, OdeProblem, PiecewisePolySolution, build_partition, fit_order, uniform_partition
from madapt.primal import ConvergenceError, SolverConfig, check_galerkin_orthogonality, residual, solve_primal
from madapt.problems import TEST6_RATIOS, const, decay, get_problem
from madapt.verify import compare_monoadaptive, error_report


@pytest.fixture(scope="module")
def test6():
    return get_problem("test6")


@pytest.mark.parametrize("k", [0.5, 0.1, 0.01])
def test_mdg0_one_step_is_implicit_euler(k):
    U = solve_primal(decay(T=k), build_partition([k], k), SolverConfig("mdG", 0, tol=1e-15))
    assert U.final_value()[0] == pytest.approx(1 / (1 + k), abs=1e-14)


@pytest.mark.parametrize("k", [0.5, 0.1, 0.01])
def test_mcg1_one_step_is_trapezoid(k):
    U = solve_primal(decay(T=k), build_partition([k], k), SolverConfig("mcG", 1, tol=1e-15))
    assert U.final_value()[0] == pytest.approx((1 - k / 2) / (1 + k / 2), abs=1e-14)


def test_constant_rhs_mdg0_exact_at_nodes():
    prob = const(T=1.0)
    U = solve_primal(prob, build_partition([0.25, 0.125], 1.0), SolverConfig("mdG", 0, tol=1e-14))
    for i, nodes in enumerate(U.partition.components.nodes):
        np.testing.assert_allclose(U.values[i][:, 0], prob.exact(nodes[1:])[i], atol=1e-14)


@pytest.mark.parametrize("method,q", [("mcG", 1), ("mcG", 3), ("mdG", 1), ("mdG", 2)])
def test_constant_rhs_is_exact(method, q):
    prob = const(T=1.0)
    U = solve_primal(prob, build_partition([0.25, 0.125], 1.0), SolverConfig(method, q, tol=1e-14))
    t = np.linspace(0.01, 1, 37)
    np.testing.assert_allclose(U.evaluate_all(t), prob.exact(t), atol=1e-13)
    # first sweep is exact, the second one confirms it
    assert max(U.info["iterations"]) <= 2
    for i in range(2):
        for tt in (0.3, 0.77):
            assert abs(residual(U, prob, i, tt)) < 1e-13


def test_residual_of_constant_elements(test6):
    U = solve_primal(test6, uniform_partition(0.1, TEST6_RATIOS, 1.0), SolverConfig("mdG", 0))
    t = 0.333
    f = test6.f_batch(U.evaluate_all(np.array([t])), np.array([t]))[:, 0]
    for i in range(6):
        assert residual(U, test6, i, t) == pytest.approx(-f[i], abs=1e-15)


def test_residual_midpoint_mcg1():
    k = 0.2
    U = solve_primal(decay(T=k), build_partition([k], k), SolverConfig("mcG", 1, tol=1e-15))
    u1 = (1 - k / 2) / (1 + k / 2)
    slope = (u1 - 1) / k
    mid = (1 + u1) / 2
    assert residual(U, decay(T=k), 0, k / 2) == pytest.approx(slope + mid, abs=1e-14)


def test_residual_at_node_needs_side():
    prob = decay()
    U = solve_primal(prob, build_partition([0.25], 1.0), SolverConfig("mdG", 1))
    with pytest.raises(DomainError):
        residual(U, prob, 0, 0.5)
    left = residual(U, prob, 0, 0.5, side="left")
    right = residual(U, prob, 0, 0.5, side="right")
    assert left != right
    with pytest.raises(DomainError):
        residual(U, prob, 0, 1.5)


def test_orthogonality_mdg0_decay():
    prob = decay()
    U = solve_primal(prob, build_partition([0.1], 1.0), SolverConfig("mdG", 0, tol=1e-13))
    assert max(np.max(v) for v in check_galerkin_orthogonality(U, prob)) <= 1e-12


def test_orthogonality_constant_rhs():
    prob = const()
    U = solve_primal(prob, build_partition([0.25, 0.5], 1.0), SolverConfig("mcG", 2, tol=1e-14))
    assert max(np.max(v) for v in check_galerkin_orthogonality(U, prob)) <= 1e-15


@pytest.mark.parametrize("method,q", [("mcG", 2), ("mdG", 1)])
def test_orthogonality_detects_perturbation(test6, method, q):
    U = solve_primal(test6, uniform_partition(0.1, TEST6_RATIOS, 1.0), SolverConfig(method, q, tol=1e-13))
    base = check_galerkin_orthogonality(U, test6)
    assert max(np.max(v) for v in base) <= 1e-11
    values = [v.copy() for v in U.values]
    values[4][7, 1] += 1e-3
    bad = PiecewisePolySolution(U.method, U.partition, U.degrees, tuple(values), U.initial)
    viol = check_galerkin_orthogonality(bad, test6)
    assert viol[4][7] >= 1e-4


@pytest.mark.parametrize("q", [1, 2, 3])
def test_mcg_is_continuous(test6, q):
    U = solve_primal(test6, uniform_partition(0.1, TEST6_RATIOS, 1.0), SolverConfig("mcG", q))
    scale = max(np.max(np.abs(v)) for v in U.values)
    for i in range(6):
        assert np.max(np.abs(U.node_jumps(i))) <= 1e-12 * scale


def test_mdg_is_left_continuous(test6):
    U = solve_primal(test6, uniform_partition(0.1, TEST6_RATIOS, 1.0), SolverConfig("mdG", 1))
    node = U.partition.components.nodes[2][3]
    below = U.evaluate_component(2, np.array([node - 1e-13]))[0]
    assert U.evaluate_component(2, np.array([node]))[0] == pytest.approx(below, abs=1e-11)


@pytest.mark.parametrize("method,q", [("mdG", 0), ("mdG", 1), ("mcG", 1), ("mcG", 2)])
def test_contraction_ratio_halves_with_step(method, q):
    lam = 2.0
    ratios = []
    for k in (0.1, 0.05):
        U = solve_primal(decay(lam=lam), build_partition([k], 1.0), SolverConfig(method, q, tol=1e-15))
        hist = np.array(U.info["updates"][0])
        hist = hist[hist > 1e-13]
        ratios.append(np.max(hist[1:] / hist[:-1]))
    assert ratios[0] < 1
    assert ratios[1] <= 0.5 * ratios[0] * 1.05


def test_mdg0_contraction_ratio_is_k_lambda():
    lam, k = 2.0, 0.1
    U = solve_primal(decay(lam=lam), build_partition([k], 1.0), SolverConfig("mdG", 0, tol=1e-15))
    hist = np.array(U.info["updates"][0])
    np.testing.assert_allclose(hist[1:4] / hist[:3], k * lam, rtol=1e-6)


@pytest.mark.parametrize("method,q", [("mcG", 2), ("mdG", 1)])
def test_jacobi_matches_gauss_seidel(test6, method, q):
    P = uniform_partition(0.1, TEST6_RATIOS, 1.0)
    gs = solve_primal(test6, P, SolverConfig(method, q, tol=1e-14))
    ja = solve_primal(test6, P, SolverConfig(method, q, tol=1e-14, sweep="jacobi"))
    ja2 = solve_primal(test6, P, SolverConfig(method, q, tol=1e-14, sweep="jacobi"))
    for a, b, c in zip(gs.values, ja.values, ja2.values):
        np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_array_equal(b, c)
    assert ja.info["updates"] == ja2.info["updates"]


def test_nonconvergence_reports_slab():
    prob = decay(lam=1.0, T=2.0)
    with pytest.raises(ConvergenceError) as info:
        solve_primal(prob, build_partition([0.5, ], 2.0), SolverConfig("mdG", 0, max_iterations=3, tol=1e-15))
    assert info.value.slab == 0
    assert info.value.update > 0


def test_nonfinite_rhs_is_reported():
    prob = OdeProblem(lambda u, t: -u if t < 0.5 else u * np.nan, [1.0], 1.0)
    with pytest.raises(NumericalError, match="non-finite"):
        solve_primal(prob, build_partition([0.25], 1.0), SolverConfig("mdG", 1))


@pytest.mark.parametrize("kwargs", [dict(method="xg"), dict(tol=0.0), dict(max_iterations=0), dict(sweep="random")])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_degree_validation(test6):
    with pytest.raises(ValueError):
        solve_primal(test6, uniform_partition(0.1, TEST6_RATIOS, 1.0), SolverConfig("mcG", 0))


def test_dimension_mismatch(test6):
    with pytest.raises(ValueError):
        solve_primal(test6, build_partition([0.1], 1.0), SolverConfig("mcG", 1))


def test_per_component_degrees(test6):
    q = (1, 1, 2, 2, 3, 3)
    U = solve_primal(test6, uniform_partition(0.1, TEST6_RATIOS, 1.0), SolverConfig("mcG", q))
    assert U.degrees == q
    assert [v.shape[1] for v in U.values] == [2, 2, 3, 3, 4, 4]
    assert error_report(U, test6.exact).l2 < 1e-2


@pytest.mark.parametrize("method,q", [("mcG", 1), ("mcG", 2), ("mdG", 1), ("mdG", 2)])
def test_interior_order_is_q_plus_one(test6, method, q):
    ks = 0.1 * 2.0 ** -np.arange(4)
    errs = []
    for k in ks:
        U = solve_primal(test6, uniform_partition(k, TEST6_RATIOS, 1.0), SolverConfig(method, q, tol=1e-14))
        errs.append(error_report(U, test6.exact, dense=True).sup_linf)
    assert abs(fit_order(ks, errs, 1e-13).order - (q + 1)) <= 0.3


@pytest.mark.parametrize("method,q", [("mcG", 1), ("mdG", 0), ("mcG", 2), ("mdG", 1)])
def test_equal_steps_match_collocation_reference(test6, method, q):
    assert compare_monoadaptive(method, q, test6, 0.05) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 3.0), st.sampled_from([0.25, 0.125, 0.1]))
def test_mdg0_and_mcg1_match_classical_steppers(lam, k):
    prob = decay(lam=lam)
    P = build_partition([k], 1.0)
    n = len(P.components.nodes[0]) - 1
    U0 = solve_primal(prob, P, SolverConfig("mdG", 0, tol=1e-15)).values[0][:, -1]
    U1 = solve_primal(prob, P, SolverConfig("mcG", 1, tol=1e-15)).values[0][:, -1]
    steps = np.arange(1, n + 1)
    np.testing.assert_allclose(U0, (1 / (1 + lam * k)) ** steps, rtol=1e-12)
    np.testing.assert_allclose(U1, ((1 - lam * k / 2) / (1 + lam * k / 2)) ** steps, rtol=1e-12)
