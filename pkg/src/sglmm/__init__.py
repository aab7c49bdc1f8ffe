"""Bayesian spatial GLMMs for district-by-sector donation totals.

Pipeline: ingest donation records into a per-capita district-by-sector
dataset, fit gamma/lognormal/normal/Weibull regressions with optional
basis-reduced spatial effects by adaptive-Metropolis MCMC, check convergence,
compare models by MAE/MSE/DIC, and run counterfactual donation scenarios.
"""

from .compare import (
    ComparisonReport,
    PredictiveDraws,
    compare_model,
    dic,
    mae_mse,
    posterior_predict,
    summarize_coefficients,
    vif_gvif,
)
from .data_prep import (
    PRECISIONS,
    SECTORS,
    AggregationReport,
    District,
    DistrictRegistry,
    DonationRecord,
    aggregate,
    aggregate_report,
    cents_to_dollars,
    disperse_by_population,
    per_capita_standardize,
    read_adjacency,
    read_covariates,
    read_donations,
    read_registry,
    split_subprojects,
)
from .dataset import ArealDataset
from .diagnostics import DiagnosticsReport, diagnose, gelman_rubin, geweke, mcse
from .errors import (
    ConvergenceError,
    DataError,
    DomainError,
    MalformedRecordError,
    NumericalError,
    RankError,
    ResolutionError,
    SglmmError,
    ShapeError,
    StructureError,
)
from .likelihoods import (
    Family,
    family_mean,
    family_variance,
    log_density,
    mean_from_linear_predictor,
)
from .model import (
    Hyper,
    ModelSpec,
    ParamVector,
    log_likelihood,
    log_posterior,
    log_prior,
    param_names,
)
from .sampler import (
    PosteriorDraws,
    SamplerConfig,
    load_chain_files,
    run,
    sample_blocks,
    save_chain_files,
)
from .scenario import (
    ScenarioResult,
    ScenarioSpec,
    Selection,
    adjusted_beta_posterior,
    power_diagnostic,
    simulate_scenario,
    standardized_residuals,
)
from .simulate import SynthSpec, generate
from .spatial import IcarStructure, MoranBasis, icar_precision, moran_basis, projector

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # data ingestion
    "SECTORS", "PRECISIONS", "DonationRecord", "District", "DistrictRegistry",
    "AggregationReport", "split_subprojects", "disperse_by_population",
    "aggregate", "aggregate_report", "per_capita_standardize",
    "cents_to_dollars", "read_donations", "read_registry", "read_covariates",
    "read_adjacency", "ArealDataset",
    # model
    "Family", "log_density", "mean_from_linear_predictor", "family_mean",
    "family_variance", "Hyper", "ModelSpec", "ParamVector", "param_names",
    "log_likelihood", "log_prior", "log_posterior",
    # spatial structure
    "IcarStructure", "MoranBasis", "icar_precision", "projector", "moran_basis",
    # sampling and diagnostics
    "SamplerConfig", "PosteriorDraws", "run", "sample_blocks",
    "save_chain_files", "load_chain_files", "diagnose", "DiagnosticsReport",
    "geweke", "gelman_rubin", "mcse",
    # comparison
    "PredictiveDraws", "ComparisonReport", "posterior_predict", "mae_mse",
    "dic", "compare_model", "summarize_coefficients", "vif_gvif",
    # scenario
    "Selection", "ScenarioSpec", "ScenarioResult", "adjusted_beta_posterior",
    "simulate_scenario", "standardized_residuals", "power_diagnostic",
    # synthetic data
    "SynthSpec", "generate",
    # errors
    "SglmmError", "DataError", "MalformedRecordError", "ResolutionError",
    "StructureError", "NumericalError", "DomainError", "ShapeError",
    "RankError", "ConvergenceError",
]
