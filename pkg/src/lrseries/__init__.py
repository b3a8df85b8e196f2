"""Locally robust series estimation.

Second-stage least squares of a cross-fitted, Neyman-orthogonal signal on
technical regressors, with pointwise Gaussian intervals, sup-t uniform
confidence bands via the exponential-weight bootstrap, and a Monte Carlo
harness comparing the estimator against complete-case OLS and IPW.
"""

from .basis import BasisSpec, DesignMatrix, bspline_spec_from_data, design_matrix, eval_basis, sup_basis_norm
from .crossfit import (
    CrossfitResult,
    Dataset,
    FirstStageConfig,
    FoldAssignment,
    NuisanceBundle,
    crossfit_signals,
    make_folds,
)
from .errors import (
    ConfigError,
    DegenerateFitError,
    DomainError,
    DrawRejectionError,
    EstimationError,
    FoldDegeneracyError,
    IdentificationError,
    SingularMatrixError,
    TailExtrapolationError,
)
from .first_stage import (
    DensityScoreFit,
    LassoFit,
    PropensityFit,
    default_penalty,
    eval_log_density_derivative,
    fit_density_score,
    lasso_fit,
    logistic_lasso_fit,
    predict_propensity,
)
from .lre import (
    BandResult,
    DiagnosticsReport,
    LREFit,
    bootstrap_draw,
    diagnostics,
    estimate_covariance,
    fit_lre,
    pointwise_interval,
    uniform_band,
)
from .montecarlo import DesignConfig, McSummary, gen_design, run_mc, true_blp
from .numerics import (
    RngStream,
    min_eigenvalue,
    normal_quantile,
    solve_spd,
    symmetrize,
    toeplitz_correlation,
    toeplitz_gaussian,
)
from .signals import (
    NuisanceValues,
    SignalKind,
    build_signals,
    signal_capd,
    signal_cate,
    signal_cate_missing,
    signal_ipw_cate,
    signal_ipw_missing,
    signal_missing,
)

__version__ = "0.1.0"
