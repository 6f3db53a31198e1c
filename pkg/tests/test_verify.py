import numpy as np
import pytest

from madapt.core import build_partition, uniform_partition
from madapt.dual import DualData
from madapt.problems import TEST6_RATIOS, const, decay, get_problem
from madapt.verify import (
    InvalidStudyError,
    _collocation_tableau,
    check_error_representation,
    classical_stepper,
    compare_monoadaptive,
    compare_oracle,
    error_report,
    probe_jump_scaling,
    run_convergence_study,
)


@pytest.fixture(scope="module")
def test6():
    return get_problem("test6")


def test_study_mcg1(test6):
    study = run_convergence_study(test6, "mcG", 1, k0=0.1, levels=4, ratios=TEST6_RATIOS)
    assert study.order == pytest.approx(2.0, abs=0.05)
    assert len(study.k0) == 5


def test_study_mdg2(test6):
    study = run_convergence_study(test6, "mdG", 2, k0=0.1, levels=4, ratios=TEST6_RATIOS)
    assert 4.85 <= study.order <= 5.1


def test_study_decay_mdg0():
    study = run_convergence_study(decay(), "mdG", 0, k0=0.1, levels=5)
    assert study.order == pytest.approx(1.0, abs=0.05)


def test_csv_format():
    study = run_convergence_study(decay(), "mcG", 1, k0=0.1, levels=3)
    lines = study.to_csv().splitlines()
    assert lines[0] == "k0,error_l2,error_linf,iterations_total,seconds"
    assert len(lines) == 6
    k, e2, ei, it, sec = lines[1].split(",")
    assert float(k) == 0.1 and float(e2) > 0 and int(it) > 0 and float(sec) >= 0
    assert lines[-1].startswith("# fitted_order=2.0")
    assert "window=0.1;0.05;0.025;0.0125" in lines[-1]


def test_invalid_study_is_reported():
    # polynomial solution: every level sits at roundoff
    with pytest.raises(InvalidStudyError) as info:
        run_convergence_study(const(), "mcG", 2, k0=0.1, levels=3)
    assert info.value.study.order is None
    study = run_convergence_study(const(), "mcG", 2, k0=0.1, levels=3, strict=False)
    assert not study.fit.valid


def test_thread_count_does_not_change_results(test6, monkeypatch):
    one = run_convergence_study(test6, "mdG", 1, levels=3, ratios=TEST6_RATIOS, threads=1)
    monkeypatch.setenv("MADAPT_THREADS", "4")
    four = run_convergence_study(test6, "mdG", 1, levels=3, ratios=TEST6_RATIOS)
    assert one.to_csv(with_seconds=False) == four.to_csv(with_seconds=False)


def test_study_needs_exact_solution(test6):
    from madapt.core import OdeProblem

    prob = OdeProblem(lambda u, t: -u, [1.0], 1.0)
    with pytest.raises(ValueError):
        run_convergence_study(prob, "mcG", 1)


def test_error_report_exact_solution_is_zero():
    prob = const()
    from madapt.primal import SolverConfig, solve_primal

    U = solve_primal(prob, build_partition([0.25, 0.5], 1.0), SolverConfig("mcG", 1, tol=1e-14))
    rep = error_report(U, prob.exact, dense=True)
    assert rep.l2 < 1e-14 and rep.sup_linf < 1e-14


@pytest.mark.parametrize("mode", ["psi", "g"])
@pytest.mark.parametrize("method,q", [("mcG", 1), ("mdG", 0), ("mdG", 1)])
def test_representation_constant_rhs(mode, method, q):
    rep = check_error_representation(const(), method, q, build_partition([0.25, 0.125], 1.0), data=mode)
    assert rep.residual <= 1e-14


def test_representation_decay_single_step_closed_form():
    # mcG(1), one step: pi u is linear through the exact values, the dual is constant
    k = 0.3
    rep = check_error_representation(decay(T=k), "mcG", 1, build_partition([k], k), data=DualData.psi_mode([1.0]),
                                     tol=1e-15)
    phi = 1 / (1 + k / 2)
    expected = -phi * (k * (1 + np.exp(-k)) / 2 - (1 - np.exp(-k)))
    assert rep.rhs == pytest.approx(expected, abs=1e-15)
    assert rep.lhs == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("mode", ["psi", "g"])
@pytest.mark.parametrize("method,q", [("mcG", 1), ("mcG", 2), ("mdG", 0), ("mdG", 1)])
def test_representation_multirate(test6, mode, method, q):
    rep = check_error_representation(test6, method, q, uniform_partition(0.1, TEST6_RATIOS, 1.0), data=mode)
    assert rep.residual <= 1e-8
    assert abs(rep.lhs) > 1e-12


def test_representation_residual_tracks_solver_tolerance(test6):
    P = uniform_partition(0.1, TEST6_RATIOS, 1.0)
    res = [check_error_representation(test6, "mdG", 1, P, tol=tol).residual for tol in (1e-6, 1e-10)]
    assert res[1] < res[0]


@pytest.mark.parametrize("q", [0, 1, 2])
def test_jump_scaling(q):
    study = probe_jump_scaling(decay(), q, k0=0.1, levels=4)
    assert abs(study.exponent - (q + 1)) <= 0.3


@pytest.mark.parametrize("method,q", [("mdG", 0), ("mcG", 1)])
def test_oracles(method, q):
    cmp = compare_oracle(method, q, decay())
    assert cmp.passed and cmp.max_deviation <= 1e-12


def test_oracle_reports_first_offending_step():
    cmp = compare_oracle("mdG", 0, decay(), reference="trapezoid", steps=20)
    assert cmp.first_offending_step == 1 and not cmp.passed


def test_oracle_without_reference():
    with pytest.raises(ValueError):
        compare_oracle("mdG", 2, decay())


def test_classical_steppers_closed_form():
    k, n = 0.1, 10
    np.testing.assert_allclose(classical_stepper("implicit-euler", decay(), k, n)[:, 0],
                               (1 / (1 + k)) ** np.arange(n + 1), rtol=1e-14)
    with pytest.raises(ValueError):
        classical_stepper("rk4", decay(), k, n)


@pytest.mark.parametrize("kind,s", [("lobatto", 2), ("lobatto", 3), ("radau", 1), ("radau", 2), ("radau", 3)])
def test_collocation_tableau_order_conditions(kind, s):
    c, A = _collocation_tableau(kind, s)
    # simplifying assumption C(s): sum_j a_ij c_j^(l-1) = c_i^l / l
    for l in range(1, s + 1):
        np.testing.assert_allclose(A @ c ** (l - 1), c**l / l, atol=1e-14)
    assert c[-1] == pytest.approx(1.0)


@pytest.mark.parametrize("method,q", [("mcG", 1), ("mdG", 0), ("mcG", 3), ("mdG", 2)])
def test_monoadaptive_equality(test6, method, q):
    assert compare_monoadaptive(method, q, test6, 0.05) <= 1e-12


def test_coarse_ladder_high_order(test6):
    # a coarser ladder keeps high-order errors above roundoff
    study = run_convergence_study(test6, "mcG", 4, k0=1.0, levels=3, ratios=TEST6_RATIOS)
    assert study.order >= 7.4
