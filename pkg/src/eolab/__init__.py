"""eolab: a laboratory for data-driven stochastic optimization.

Implements empirical optimization and its expanded alternatives
(regularization, divergence- and Wasserstein-robust optimization, parametric
plug-in, Bayesian, constrained), samples the limit laws of their scaled
optimality gaps, and tests second-order stochastic dominance between them.
"""

from .divergence import (
    PhiDivergence,
    DivergenceError,
    get_divergence,
    kl_divergence,
    chi2_divergence,
    conjugate_eval,
    divergence_value,
    verify_conjugate_identities,
)
from .model import (
    ProblemSpec,
    OracleCertificate,
    Dataset,
    ConstraintSet,
    ParametricModel,
    ModelError,
    InfeasibleError,
    get_problem,
    list_problems,
    problem_from_json,
    sample_dataset,
    true_gap,
    eo_influence,
    lagrangian_hessian,
    check_derivatives,
)
from .solvers import (
    ProcedureSpec,
    Solution,
    SolverError,
    ConvergenceError,
    DualDegeneracyError,
    solve,
    solve_eo,
    solve_regularized,
    solve_dro_divergence,
    solve_dro_lagrangian,
    solve_dro_wasserstein,
    solve_parametric,
    solve_bayesian,
    solve_constrained_eo,
    worst_case_expectation,
)
from .dominance import (
    EmpiricalSample,
    DominancePolicy,
    DominanceVerdict,
    stop_loss,
    icx_dominates,
    mps_check,
    utility_moments,
)
from .asymptotics import (
    LimitLawParams,
    trichotomy_case,
    sample_limit_law,
    gap_distribution,
    ks_distance,
    expansion_residual_rate,
    expected_gap_bias,
    cramer_rao_trace,
    ldro_bias_variance_check,
    limit_params_for,
    mix_seed,
)
from .harness import (
    ExperimentConfig,
    ProcedureEntry,
    LambdaRule,
    Report,
    HarnessError,
    FailureBudgetError,
    run_experiment,
    estimate_disappointment,
    write_report,
    read_report,
)

__version__ = "0.1.0"
