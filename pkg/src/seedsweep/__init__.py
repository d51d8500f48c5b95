"""seedsweep: seed-sensitivity sweeps for statistical-learning estimators.

Four models (lasso, group lasso, weighted quantile sum regression, Bayesian
kernel machine regression) plus a harness that runs any of them across many
RNG seeds and summarizes the across-seed variability of estimation and
inference.
"""

from .backend import active_backend
from .bkmr import (
    BkmrConfig,
    ExposureResponse,
    McmcTrace,
    OverallEffect,
    PipTable,
    compute_pips,
    gaussian_kernel,
    gelman_rubin,
    mcmc_run,
    overall_mixture_effect,
    univariate_hresponse,
)
from .data import Dataset, GroupSpec, kfold_assign, quantile_bin, quantile_scores, standardize
from .dataio import (
    ColumnRoles,
    emit_outputs,
    load_csv,
    load_summary,
    reaggregate,
    write_dataset,
)
from .errors import ConfigError, DataError, ModelError, SeedSweepError
from .penalized import (
    CvCurve,
    GroupLassoFit,
    LambdaGrid,
    LassoFit,
    cv_group_lasso,
    cv_lasso,
    default_grid,
    group_lambda_max,
    group_lasso_fit,
    lambda_max,
    lasso_fit,
    soft_threshold,
)
from .rng import SeedStream
from .sweep import (
    BkmrSweepConfig,
    PenalizedSweepConfig,
    SeedOutcome,
    SweepConfig,
    SweepSummary,
    WqsSweepConfig,
    run_sweep,
    summarize,
    summarize_coefficients,
    summarize_curves,
    summarize_pips,
    summarize_weights,
)
from .synth import SyntheticSpec, generate_synthetic
from .wqs import (
    PooledEstimate,
    WqsConfig,
    WqsFit,
    fit_index_regression,
    important_components,
    rubins_pool,
    split_train_test,
    wqs_index,
    wqs_run,
)
from .cli import cli_main

__version__ = "0.1.0"
