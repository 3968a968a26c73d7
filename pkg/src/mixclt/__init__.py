"""Exact mixing coefficients, variance bounds, moment inequalities and
Monte-Carlo CLT experiments for triangular arrays of finite-state
non-homogeneous Markov chains."""

from .chain_model import (
    ChainSpec,
    JointLaw,
    MarginalLaws,
    enumerate_expectation,
    joint_law,
    load_spec,
    marginals,
    observation_bound,
    sample_path,
    save_spec,
    validate,
)
from .coefficients import (
    CoefficientReport,
    coefficient_report,
    delta_coefficient,
    max_correlation,
    rho1_lambda,
    rho_k_sequence,
)
from .families import (
    TriangularFamily,
    family_degenerate,
    family_gaussian_ar1,
    family_iid,
    family_random,
    family_two_state,
    parse_family,
    parse_rate,
)
from .clt_harness import (
    ConditionValue,
    ExperimentResult,
    condition_dob,
    condition_dobrushin_cd,
    condition_log2,
    ks_distance,
    lindeberg_functional,
    lindeberg_functional_b,
    mc_normalized_sums,
    run_experiment,
    truncate,
)
from .moments import (
    MomentReport,
    exp_moment_inequality_check,
    martingale_identity_check,
    moment_report,
    partial_sum_variance,
    partial_sum_variance_oracle,
    tail_conditional,
    tail_moment_inequality_check,
    tail_moment_sum,
    tail_variance_lower_bound_check,
    delta_variance_bounds_check,
    variance_bounds_check,
    variance_sum,
)
from .rng import Stream

__version__ = "0.1.0"
