"""MAP path estimation and its long-horizon behaviour in hidden Markov models."""
__version__ = "0.1.0"

from ._kernels import BACKEND
from .errors import (
    AssumptionError,
    ConvergenceError,
    DegenerateObservationError,
    HmmLabError,
    InputError,
    ModelError,
    SizeError,
)
from .models import (
    ContinuousHmmModel,
    DiscreteHmmModel,
    GridSpec,
    Trajectory,
    discrete_gaussian,
    estimate_growth_constant,
    eval_h,
    eval_h_grad_hess,
    laplace_gaussian,
    linear_gaussian,
    load_model,
    power_family,
    sample_trajectory,
    validate_assumptions,
)
from .newton import (
    MapPaths,
    MapSolution,
    PrefixSeries,
    SolverConfig,
    influence_jacobian,
    prefix_series,
    solve_constrained,
    solve_map,
    tail_sensitivity,
)
from .viterbi import (
    ViterbiResult,
    brute_force_map,
    coalesced_prefix,
    d_set_member,
    path_log_likelihood,
    renewal_times,
    viterbi,
)
from .divergence import (
    DivergenceModel,
    StationaryLaw,
    brute_force_v,
    closed_form_map,
    interval_index,
    stationary_dist,
    track_jstar,
)
from .convergence import (
    DecayReport,
    IneqSequences,
    check_lemma34,
    check_lemma_a1,
    diff_series,
    empirical_bconv_exponent,
    gen_feasible,
    laplace_stabilization_report,
    lemma_a1_bounds,
    proof_constants,
    verify_ineq_system,
)

__all__ = [
    "__version__",
    "AssumptionError",
    "BACKEND",
    "brute_force_map",
    "brute_force_v",
    "check_lemma34",
    "check_lemma_a1",
    "closed_form_map",
    "coalesced_prefix",
    "ContinuousHmmModel",
    "ConvergenceError",
    "d_set_member",
    "DecayReport",
    "DegenerateObservationError",
    "diff_series",
    "discrete_gaussian",
    "DiscreteHmmModel",
    "DivergenceModel",
    "empirical_bconv_exponent",
    "estimate_growth_constant",
    "eval_h",
    "eval_h_grad_hess",
    "gen_feasible",
    "GridSpec",
    "HmmLabError",
    "IneqSequences",
    "influence_jacobian",
    "InputError",
    "interval_index",
    "laplace_gaussian",
    "laplace_stabilization_report",
    "lemma_a1_bounds",
    "linear_gaussian",
    "load_model",
    "MapPaths",
    "MapSolution",
    "ModelError",
    "path_log_likelihood",
    "power_family",
    "prefix_series",
    "PrefixSeries",
    "proof_constants",
    "renewal_times",
    "sample_trajectory",
    "SizeError",
    "solve_constrained",
    "solve_map",
    "SolverConfig",
    "stationary_dist",
    "StationaryLaw",
    "tail_sensitivity",
    "track_jstar",
    "Trajectory",
    "validate_assumptions",
    "verify_ineq_system",
    "viterbi",
    "ViterbiResult",
]
