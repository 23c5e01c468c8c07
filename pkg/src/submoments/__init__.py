"""Moment estimation for hidden stationary processes observed through
sub-sampled proxies.

The package covers the full workflow: simulate a model (or load a
trajectory), apply an observable that degrades it into a proxy sequence,
pick a sub-sampling scheme matched to the proxy quality, estimate means
and lagged covariances, compare them against theoretical error bounds,
and invert the moments back into model parameters.
"""

from .errors import (
    InsufficientData,
    MomentsOutsideModelRange,
    NumericalError,
    ParameterDomain,
    ResourceLimit,
    SchemeGridMismatch,
    SchemeTooShortForLag,
    SimulationDiverged,
    SolverDidNotConverge,
    SubmomentsError,
    UsageError,
    ValidationError,
)
from .estimators import (
    LaggedCovarianceEstimate,
    MeanEstimate,
    covariance_curve,
    empirical_mean,
    estimates_to_csv,
    lag_index,
    lagged_covariance,
    lagged_covariance_product_form,
)
from .grids import (
    GridValidation,
    RandomStreamSpec,
    StreamRole,
    SubsamplingScheme,
    TrajectoryGrid,
    read_binary,
    read_csv,
    resolve_stride,
    subsample_sequence,
    subsample_view,
    validate_grid,
    write_binary,
    write_csv,
)
from .invert import (
    CIR_PARAMETER_NAMES,
    OU_PARAMETER_NAMES,
    MomentDescriptor,
    MomentVector,
    ParameterBall,
    ParameterEstimate,
    SolverDiagnostics,
    cir_moment_map,
    default_ou_descriptors,
    extract_moment_vector,
    invert_cir,
    invert_least_squares,
    invert_ou,
    ou_moment_map,
    truncate_to_ball,
    truncate_vector,
)
from .lab import (
    ConvergenceReport,
    EndToEndConfig,
    EndToEndReport,
    Ensemble,
    ExperimentConfig,
    GapCheck,
    HestonRVConfig,
    HestonRVReport,
    ProbeTable,
    RateFit,
    build_report,
    decorrelation_probe,
    empirical_lp_error,
    ensemble_cov_errors,
    ensemble_mean_errors,
    fit_rate_slope,
    load_ensemble,
    perturbation_gap_check,
    run_endtoend_ou,
    run_heston_rv,
    run_replications,
    save_ensemble,
)
from .models import (
    SLOW_FAST_CATALOG,
    GradientDiffusionParams,
    HestonParams,
    OUParams,
    SlowFastParams,
    default_rv_window,
    heston_initial_variance,
    multiplicative_perturbation_observable,
    ou_bound_inputs,
    ou_decorrelation_profile,
    ou_true_covariance,
    realized_volatility_observable,
    simulate_gradient_diffusion,
    simulate_heston,
    simulate_ou,
    simulate_slow_fast,
    smoothing_observable,
)
from .schemes import (
    BoundInputs,
    DecorrelationProfile,
    SchemeRecommendation,
    covariance_bound_constant,
    decorrelation_sum_bound,
    error_bound_observable,
    error_bound_unobservable,
    gaussian_fourth_moment,
    mean_bound_constant,
    mean_error_bounds,
    observable_bound_terms,
    reference_bound_inputs,
    scheme_from_n,
    scheme_from_rho,
    validate_scheme_sequence,
)

__version__ = "0.1.0"
