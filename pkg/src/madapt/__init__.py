"""Multiadaptive continuous and discontinuous Galerkin solvers for ODEs."""

from .core import (
    ComponentPartition,
    DomainError,
    MadaptError,
    NumericalError,
    OdeProblem,
    Partition,
    PartitionError,
    PiecewisePolySolution,
    TimeSlab,
    build_partition,
    evaluate,
    fit_order,
    norm_lp,
    uniform_partition,
)
from .dual import (
    DualData,
    LinearizationPath,
    mean_jacobian,
    solve_dual,
    stability_factor_S,
    stability_factor_Sbar,
    stability_report,
)
from .interp import (
    InterpolationProblem,
    interp_cg,
    interp_cg_dual,
    interp_dg,
    interp_dg_dual,
    interpolate_solution,
    measure_interp_order,
)
from .polyquad import QuadratureRule, fixed_point_weights, gauss_rule, lagrange_basis, lobatto_rule, radau_rule
from .primal import ConvergenceError, SolverConfig, check_galerkin_orthogonality, residual, solve_primal
from .problems import get_problem, register_problem
from .verify import (
    check_error_representation,
    compare_oracle,
    probe_jump_scaling,
    run_convergence_study,
)

__version__ = "0.1.0"
