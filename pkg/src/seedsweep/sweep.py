"""The multi-seed protocol: run one model across many seeds and summarize.

``run_sweep`` executes the chosen model once per seed, each run driven
entirely by ``SeedStream(seed)``, and collects per-seed payloads (or the
per-seed error) in seed order.  Failures are isolated: one bad seed is
recorded and the sweep continues.  The ``summarize_*`` functions turn the
collected payloads into the across-seed variability tables: proportion of
nonzero coefficients, medians and IQRs, proportion of weights above the
threshold, pooled index estimates, and PIP min/median/max tables.

Execution order never affects output: results are keyed by seed and sorted
before aggregation, and every per-seed run pins BLAS to one thread so the
arithmetic is identical under any ``parallelism``.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .bkmr import (
    BkmrConfig,
    ExposureResponse,
    OverallEffect,
    PipTable,
    compute_pips,
    gelman_rubin,
    mcmc_run,
    overall_mixture_effect,
    univariate_hresponse,
)
from .data import Dataset
from .errors import ConfigError, ModelError, SeedSweepError
from .penalized import (
    LambdaGrid,
    cv_group_lasso,
    cv_lasso,
    default_grid,
    group_lasso_fit,
    lasso_fit,
)
from .rng import SeedStream
from .wqs import PooledEstimate, WqsConfig, WqsFit, rubins_pool, wqs_run

MODELS = ("lasso", "group_lasso", "wqs", "bkmr")


@dataclass(frozen=True)
class PenalizedSweepConfig:
    """Settings shared by the lasso and group-lasso sweeps."""

    folds: int = 10
    n_lambda: int = 100
    lambda_min_ratio: float = 1e-4
    one_se: bool = False
    standardize_covariates: bool = False
    grid: LambdaGrid | None = None  # None: one grid from the full data, shared by all seeds


@dataclass(frozen=True)
class WqsSweepConfig:
    wqs: WqsConfig = field(default_factory=WqsConfig)


@dataclass(frozen=True)
class BkmrSweepConfig:
    bkmr: BkmrConfig = field(default_factory=BkmrConfig)
    compute_curves: bool = False
    curve_exposures: tuple[int, ...] | None = None  # None: every exposure
    percentiles: tuple[float, ...] = (0.25, 0.75)


@dataclass(frozen=True)
class SweepConfig:
    model: str
    model_config: object
    seeds: tuple[int, ...] = tuple(range(1, 101))
    parallelism: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.model not in MODELS:
            raise ConfigError(f"unknown model '{self.model}'; expected one of {MODELS}")
        if not self.seeds:
            raise ConfigError("seed list must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds in the seed list")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")


@dataclass(frozen=True)
class LassoSeedResult:
    seed: int
    chosen_lambda: float
    cv_mean_error: np.ndarray
    cv_se_error: np.ndarray
    beta: np.ndarray  # full original-scale coefficient vector at the chosen lambda
    group_norms: np.ndarray | None = None


@dataclass(frozen=True)
class BkmrSeedResult:
    seed: int
    pips: PipTable
    rhat_log_post: float
    curves: tuple[ExposureResponse, ...] | None
    overall: tuple[OverallEffect, ...] | None


@dataclass(frozen=True)
class SeedOutcome:
    seed: int
    payload: object | None
    error: str | None

    @property
    def ok(self) -> bool:
        return self.error is None


def _resolved_model_config(dataset: Dataset, cfg: SweepConfig):
    """Fill in data-dependent defaults once, so every seed shares them."""
    mc = cfg.model_config
    if cfg.model in ("lasso", "group_lasso"):
        if not isinstance(mc, PenalizedSweepConfig):
            raise ConfigError("lasso/group_lasso sweeps need a PenalizedSweepConfig")
        if mc.grid is None:
            grid = default_grid(
                dataset,
                count=mc.n_lambda,
                ratio=mc.lambda_min_ratio,
                grouped=cfg.model == "group_lasso",
                standardize_covariates=mc.standardize_covariates,
            )
            return PenalizedSweepConfig(
                folds=mc.folds,
                n_lambda=mc.n_lambda,
                lambda_min_ratio=mc.lambda_min_ratio,
                one_se=mc.one_se,
                standardize_covariates=mc.standardize_covariates,
                grid=grid,
            )
        return mc
    if cfg.model == "wqs":
        if not isinstance(mc, WqsSweepConfig):
            raise ConfigError("wqs sweeps need a WqsSweepConfig")
        return mc
    if not isinstance(mc, BkmrSweepConfig):
        raise ConfigError("bkmr sweeps need a BkmrSweepConfig")
    return mc


def _run_penalized_seed(dataset: Dataset, mc: PenalizedSweepConfig, seed: int, grouped: bool):
    stream = SeedStream(seed)
    if grouped:
        curve = cv_group_lasso(
            dataset, mc.folds, mc.grid, stream,
            one_se=mc.one_se, standardize_covariates=mc.standardize_covariates,
        )
        fit = group_lasso_fit(
            dataset, curve.chosen_lambda, standardize_covariates=mc.standardize_covariates
        )
        norms = fit.group_norms
    else:
        curve = cv_lasso(
            dataset, mc.folds, mc.grid, stream,
            one_se=mc.one_se, standardize_covariates=mc.standardize_covariates,
        )
        fit = lasso_fit(
            dataset, curve.chosen_lambda, standardize_covariates=mc.standardize_covariates
        )
        norms = None
    return LassoSeedResult(
        seed=seed,
        chosen_lambda=curve.chosen_lambda,
        cv_mean_error=curve.mean_error,
        cv_se_error=curve.se_error,
        beta=fit.beta,
        group_norms=norms,
    )


def _run_bkmr_seed(dataset: Dataset, mc: BkmrSweepConfig, seed: int) -> BkmrSeedResult:
    traces = mcmc_run(dataset, mc.bkmr, seed)
    pips = compute_pips(traces, dataset.groups)
    if len(traces) >= 2:
        try:
            rhat = gelman_rubin([t.log_post for t in traces])
        except ModelError:
            rhat = float("inf")  # degenerate chains: flag, do not abort the seed
    else:
        rhat = float("nan")
    curves = None
    overall = None
    if mc.compute_curves:
        exposures = (
            mc.curve_exposures if mc.curve_exposures is not None else tuple(range(dataset.p))
        )
        curves = tuple(
            univariate_hresponse(traces, dataset, m, mc.bkmr) for m in exposures
        )
        overall = tuple(overall_mixture_effect(traces, dataset, mc.percentiles, mc.bkmr))
    return BkmrSeedResult(
        seed=seed, pips=pips, rhat_log_post=rhat, curves=curves, overall=overall
    )


def _run_one(dataset: Dataset, model: str, mc, seed: int):
    # one BLAS thread per task: identical arithmetic at any parallelism
    with threadpool_limits(limits=1):
        if model == "lasso":
            return _run_penalized_seed(dataset, mc, seed, grouped=False)
        if model == "group_lasso":
            return _run_penalized_seed(dataset, mc, seed, grouped=True)
        if model == "wqs":
            return wqs_run(dataset, mc.wqs, seed)
        return _run_bkmr_seed(dataset, mc, seed)


def _safe_run(args):
    dataset, model, mc, seed = args
    try:
        return SeedOutcome(seed=seed, payload=_run_one(dataset, model, mc, seed), error=None)
    except SeedSweepError as exc:
        return SeedOutcome(seed=seed, payload=None, error=f"{type(exc).__name__}: {exc}")
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        return SeedOutcome(seed=seed, payload=None, error=f"{type(exc).__name__}: {exc}")


def run_sweep(dataset: Dataset, cfg: SweepConfig) -> list[SeedOutcome]:
    """One outcome per seed, ascending by seed, failures recorded in place."""
    mc = _resolved_model_config(dataset, cfg)
    tasks = [(dataset, cfg.model, mc, seed) for seed in sorted(cfg.seeds)]
    if cfg.parallelism == 1:
        outcomes = [_safe_run(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.parallelism) as pool:
            outcomes = list(pool.map(_safe_run, tasks))
    outcomes.sort(key=lambda o: o.seed)
    if not any(o.ok for o in outcomes):
        details = "; ".join(f"seed {o.seed}: {o.error}" for o in outcomes[:3])
        raise ModelError(f"every seed failed, e.g. {details}")
    return outcomes


# ---------------------------------------------------------------------------
# summaries


@dataclass(frozen=True)
class CoefficientSummary:
    name: str
    per_seed: np.ndarray
    proportion_nonzero: float
    median: float
    iqr_low: float
    iqr_high: float
    min: float
    max: float


@dataclass(frozen=True)
class WeightSummary:
    name: str
    per_seed: np.ndarray
    proportion_above_tau: float
    median: float
    iqr_low: float
    iqr_high: float
    min: float
    max: float
    largest_count: int  # seeds where this exposure had the single largest weight (ties credited)


@dataclass(frozen=True)
class PipSummaryRow:
    name: str
    group: str | None  # None for group-level rows
    per_seed: np.ndarray
    min: float
    median: float
    max: float


@dataclass(frozen=True)
class CurveSummary:
    name: str
    grid: np.ndarray
    per_seed: np.ndarray  # (n_seeds, grid_points) posterior-mean curves
    median: np.ndarray


@dataclass
class SweepSummary:
    """Everything the emitters need, grouped by model family."""

    model: str
    seeds: tuple[int, ...]  # successful seeds, ascending
    failures: tuple[tuple[int, str], ...]
    exposure_names: tuple[str, ...]
    coefficients: tuple[CoefficientSummary, ...] | None = None
    chosen_lambdas: np.ndarray | None = None
    retained_counts: dict[int, int] | None = None
    grid_values: np.ndarray | None = None
    cv_mean_errors: np.ndarray | None = None  # (n_seeds, n_lambda)
    cv_se_errors: np.ndarray | None = None
    weights: tuple[WeightSummary, ...] | None = None
    tau: float | None = None
    index_estimates: np.ndarray | None = None  # (n_seeds, 4): beta, se, lo, hi
    pooled_index: PooledEstimate | None = None
    flagged_seeds: tuple[int, ...] | None = None
    wqs_residual_df: int | None = None  # complete-data df used by the pooling
    pip_groups: tuple[PipSummaryRow, ...] | None = None
    pip_conditionals: tuple[PipSummaryRow, ...] | None = None
    rhat_log_post: np.ndarray | None = None
    curves: tuple[CurveSummary, ...] | None = None
    overall_effects: dict[float, np.ndarray] | None = None  # percentile -> (n_seeds, 3)


def _successes(outcomes: list[SeedOutcome]) -> list[SeedOutcome]:
    good = [o for o in outcomes if o.ok]
    if not good:
        raise ModelError("no successful seeds to summarize")
    return good


def _failures(outcomes) -> tuple[tuple[int, str], ...]:
    return tuple((o.seed, o.error) for o in outcomes if not o.ok)


def _quartiles(values: np.ndarray) -> tuple[float, float, float]:
    q1, med, q3 = np.quantile(values, [0.25, 0.5, 0.75], method="linear")
    return float(med), float(q1), float(q3)


def summarize_coefficients(
    outcomes: list[SeedOutcome], exposure_names, model: str = "lasso"
) -> SweepSummary:
    """Across-seed variability of the penalized exposure coefficients."""
    good = _successes(outcomes)
    names = tuple(exposure_names)
    p = len(names)
    values = np.stack([o.payload.beta[:p] for o in good])  # (n_seeds, p)
    coeffs = []
    for j, name in enumerate(names):
        col = values[:, j]
        med, lo, hi = _quartiles(col)
        coeffs.append(
            CoefficientSummary(
                name=name,
                per_seed=col,
                proportion_nonzero=float(np.mean(col != 0.0)),
                median=med,
                iqr_low=lo,
                iqr_high=hi,
                min=float(col.min()),
                max=float(col.max()),
            )
        )
    retained = np.count_nonzero(values, axis=1)
    hist: dict[int, int] = {}
    for count in retained:
        hist[int(count)] = hist.get(int(count), 0) + 1
    return SweepSummary(
        model=model,
        seeds=tuple(o.seed for o in good),
        failures=_failures(outcomes),
        exposure_names=names,
        coefficients=tuple(coeffs),
        chosen_lambdas=np.array([o.payload.chosen_lambda for o in good]),
        retained_counts=hist,
        grid_values=None,
        cv_mean_errors=np.stack([o.payload.cv_mean_error for o in good]),
        cv_se_errors=np.stack([o.payload.cv_se_error for o in good]),
    )


def summarize_weights(outcomes: list[SeedOutcome], exposure_names, tau: float) -> SweepSummary:
    """WQS weight variability plus the Rubin-pooled index coefficient."""
    good = _successes(outcomes)
    names = tuple(exposure_names)
    fits: list[WqsFit] = [o.payload for o in good]
    W = np.stack([f.weights for f in fits])  # (n_seeds, p)
    rows = []
    row_max = W.max(axis=1)
    for j, name in enumerate(names):
        col = W[:, j]
        med, lo, hi = _quartiles(col)
        rows.append(
            WeightSummary(
                name=name,
                per_seed=col,
                proportion_above_tau=float(np.mean(col > tau)),
                median=med,
                iqr_low=lo,
                iqr_high=hi,
                min=float(col.min()),
                max=float(col.max()),
                largest_count=int(np.sum(col == row_max)),
            )
        )
    estimates = np.array([f.index_beta for f in fits])
    ses = np.array([f.index_se for f in fits])
    pooled = rubins_pool(estimates, ses**2, complete_df=fits[0].residual_df)
    index = np.column_stack(
        [estimates, ses, [f.ci95[0] for f in fits], [f.ci95[1] for f in fits]]
    )
    return SweepSummary(
        model="wqs",
        seeds=tuple(o.seed for o in good),
        failures=_failures(outcomes),
        exposure_names=names,
        weights=tuple(rows),
        tau=float(tau),
        index_estimates=index,
        pooled_index=pooled,
        flagged_seeds=tuple(f.seed for f in fits if f.flagged),
        wqs_residual_df=int(fits[0].residual_df),
    )


def summarize_pips(outcomes: list[SeedOutcome], exposure_names, group_names, assignments) -> SweepSummary:
    """Min/median/max of group and conditional PIPs across seeds."""
    good = _successes(outcomes)
    names = tuple(exposure_names)
    gnames = tuple(group_names)
    gp = np.stack([o.payload.pips.group_pips for o in good])  # (n_seeds, G)
    cp = np.stack([o.payload.pips.conditional_pips for o in good])  # (n_seeds, p)
    group_rows = []
    for g, gname in enumerate(gnames):
        col = gp[:, g]
        med, _, _ = _quartiles(col)
        group_rows.append(
            PipSummaryRow(
                name=gname, group=None, per_seed=col,
                min=float(col.min()), median=med, max=float(col.max()),
            )
        )
    cond_rows = []
    for m, name in enumerate(names):
        col = cp[:, m]
        med, _, _ = _quartiles(col)
        cond_rows.append(
            PipSummaryRow(
                name=name, group=gnames[int(assignments[m])], per_seed=col,
                min=float(col.min()), median=med, max=float(col.max()),
            )
        )
    return SweepSummary(
        model="bkmr",
        seeds=tuple(o.seed for o in good),
        failures=_failures(outcomes),
        exposure_names=names,
        pip_groups=tuple(group_rows),
        pip_conditionals=tuple(cond_rows),
        rhat_log_post=np.array([o.payload.rhat_log_post for o in good]),
    )


def summarize_curves(outcomes: list[SeedOutcome], exposure_names) -> tuple[CurveSummary, ...]:
    """Per-exposure bundles of per-seed posterior-mean curves plus their median."""
    good = _successes(outcomes)
    first = good[0].payload.curves
    if first is None:
        raise ModelError("sweep did not compute exposure-response curves")
    bundles = []
    for i, curve in enumerate(first):
        grid = curve.grid
        per_seed = []
        for o in good:
            c = o.payload.curves[i]
            if c.grid.shape != grid.shape or not np.array_equal(c.grid, grid):
                raise ModelError("exposure-response grids differ across seeds")
            per_seed.append(c.mean)
        mat = np.stack(per_seed)
        bundles.append(
            CurveSummary(
                name=exposure_names[curve.exposure],
                grid=grid,
                per_seed=mat,
                median=np.quantile(mat, 0.5, axis=0, method="linear"),
            )
        )
    return tuple(bundles)


def summarize(dataset: Dataset, cfg: SweepConfig, outcomes: list[SeedOutcome]) -> SweepSummary:
    """Model-appropriate full summary for a finished sweep."""
    mc = cfg.model_config
    if cfg.model in ("lasso", "group_lasso"):
        summary = summarize_coefficients(outcomes, dataset.exposure_names, model=cfg.model)
        resolved = _resolved_model_config(dataset, cfg)
        summary.grid_values = resolved.grid.values if resolved.grid is not None else None
        return summary
    if cfg.model == "wqs":
        tau = mc.wqs.resolve_tau(dataset.p)
        return summarize_weights(outcomes, dataset.exposure_names, tau)
    summary = summarize_pips(
        outcomes, dataset.exposure_names, dataset.groups.group_names, dataset.groups.assignments
    )
    good = [o for o in outcomes if o.ok]
    if isinstance(mc, BkmrSweepConfig) and mc.compute_curves and good:
        summary.curves = summarize_curves(outcomes, dataset.exposure_names)
        if good[0].payload.overall is not None:
            effects: dict[float, np.ndarray] = {}
            for i, eff in enumerate(good[0].payload.overall):
                rows = np.stack(
                    [
                        (
                            o.payload.overall[i].mean,
                            o.payload.overall[i].lower,
                            o.payload.overall[i].upper,
                        )
                        for o in good
                    ]
                )
                effects[eff.percentile] = rows
            summary.overall_effects = effects
    return summary
