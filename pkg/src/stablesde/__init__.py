"""Simulation and Bayesian inference for SDEs driven by stable Levy noise."""

from .diagnostics import (
    BetaEstimate,
    BvMReport,
    LimitingAcceptance,
    PPData,
    SweepResult,
    acceptance_summary,
    autocorrelation,
    bvm_report,
    empirical_acceptance,
    estimate_beta,
    limiting_acceptance,
    posterior_residual_means,
    pp_data,
    sweep_acceptance,
)
from .errors import (
    ConfigError,
    DataFileError,
    EvaluationError,
    ExpressionParseError,
    ModelViolationError,
    NumericalError,
    QuadratureError,
    SamplerStallError,
    SimulationError,
    StableSDEError,
    UndeclaredIdentifierError,
    UserInputError,
)
from .estimators import StablePosteriorSampler, StableQuasiMLE
from .expressions import (
    ModelSpec,
    ThetaVector,
    ValidationReport,
    diff_expr,
    eval_expr,
    parse_expr,
    print_expr,
    validate_model,
)
from .io import (
    ExperimentConfig,
    config_to_toml,
    load_config,
    load_csv,
    parse_config,
    read_trace,
    write_json,
    write_series,
    write_trace,
)
from .mcmc import (
    ChainTrace,
    MCMCConfig,
    PriorSpec,
    cpm_variance_update,
    gibbs_refresh_variances,
    mwg_step,
    run_chain,
    run_cpm,
    run_mwg,
)
from .quasi import (
    MLEResult,
    OptimizerConfig,
    QuasiInfo,
    complete_loglik_ratio,
    fisher_info,
    quasi_loglik,
    quasi_mle,
    quasi_score,
    rate_matrix,
    residuals,
)
from .simulate import ObservationSet, PathConfig, increments, simulate_path
from .stable import (
    ConditionalVarianceSampler,
    QuadratureConfig,
    fisher_constants,
    sample_conditional_variance,
    sample_conditional_variances,
    sample_positive_stable,
    sample_symmetric_stable,
    stable_cdf,
    stable_pdf,
    stable_quantile,
    stable_scores,
)

__version__ = "0.1.0"

__all__ = [
    "BetaEstimate",
    "BvMReport",
    "ChainTrace",
    "ConditionalVarianceSampler",
    "ConfigError",
    "DataFileError",
    "EvaluationError",
    "ExperimentConfig",
    "ExpressionParseError",
    "LimitingAcceptance",
    "MCMCConfig",
    "MLEResult",
    "ModelSpec",
    "ModelViolationError",
    "NumericalError",
    "ObservationSet",
    "OptimizerConfig",
    "PPData",
    "PathConfig",
    "PriorSpec",
    "QuadratureConfig",
    "QuadratureError",
    "QuasiInfo",
    "SamplerStallError",
    "SimulationError",
    "StablePosteriorSampler",
    "StableQuasiMLE",
    "StableSDEError",
    "SweepResult",
    "ThetaVector",
    "UndeclaredIdentifierError",
    "UserInputError",
    "ValidationReport",
    "acceptance_summary",
    "autocorrelation",
    "bvm_report",
    "complete_loglik_ratio",
    "config_to_toml",
    "cpm_variance_update",
    "diff_expr",
    "empirical_acceptance",
    "estimate_beta",
    "eval_expr",
    "fisher_constants",
    "fisher_info",
    "gibbs_refresh_variances",
    "increments",
    "limiting_acceptance",
    "load_config",
    "load_csv",
    "mwg_step",
    "parse_config",
    "parse_expr",
    "posterior_residual_means",
    "pp_data",
    "print_expr",
    "quasi_loglik",
    "quasi_mle",
    "quasi_score",
    "rate_matrix",
    "read_trace",
    "residuals",
    "run_chain",
    "run_cpm",
    "run_mwg",
    "sample_conditional_variance",
    "sample_conditional_variances",
    "sample_positive_stable",
    "sample_symmetric_stable",
    "simulate_path",
    "stable_cdf",
    "stable_pdf",
    "stable_quantile",
    "stable_scores",
    "validate_model",
    "write_json",
    "write_series",
    "write_trace",
]
