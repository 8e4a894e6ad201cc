"""collapselab: Monte Carlo laboratory for particle-filter weight collapse.

Implements the single-update-step importance weights for Gaussian,
iid-kernel, and multivariate-Cauchy observation models, together with the
standardizations, extreme-value approximations, and collapse-rate
predictors needed to compare simulation against theory.
"""

from .models import (
    Ensemble,
    ModelSpec,
    NoiseKind,
    Observation,
    SpectralForm,
    log_kernel_gaussian,
    log_kernel_iid,
    log_kernel_mv_cauchy,
    psi_cauchy,
    psi_gaussian,
    sample_mv_cauchy,
    sample_observation,
    sample_prior,
    spectral_decompose,
)
from .weights import (
    CollapseDiagnostics,
    DegenerateLikelihoodError,
    NormalizedWeights,
    diagnostics,
    normalize,
    t_nd_from_scores,
)
from .asymptotics import (
    CauchyCollapsePredictor,
    GaussianStandardization,
    GumbelMinApprox,
    IidStandardization,
    MomentBoundReport,
    cauchy_average_rate,
    cauchy_predicted_t,
    cauchy_sigma_sq,
    expected_t_normal_closed_form,
    gaussian_collapse_rate,
    gumbel_min_approx,
    kernel_moments,
    limiting_posterior_params,
    moment_bound_check,
    normal_window_check,
    sigma_dprime_sq,
    standardize_gaussian,
    standardize_iid,
)
from .experiments import (
    CellResult,
    ExperimentGrid,
    compare_theory,
    fig1_grid,
    fig2_iid_grid,
    fig2_mv_grid,
    resample,
    run_collapse_cell,
    run_consistency,
    run_grid,
)

__version__ = "0.1.0"
