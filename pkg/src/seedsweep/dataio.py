"""CSV ingestion, dataset writing, and emission of summary artifacts.

Emitted files (``emit_outputs``):

* ``summary.json`` - the full machine-readable sweep summary, schema
  version 1, including every per-seed value so aggregates can be rebuilt.
* flat tables (``coefficients.csv`` / ``weights.csv`` / ``pips.csv``): one
  row per coefficient per seed plus one aggregate row per coefficient.
* shape files: ``cv_curves.csv`` (per-seed lambda-grid errors),
  ``index_estimates.csv`` (per-seed index coefficient and CI plus the
  pooled row), ``exposure_response.csv`` (per-seed curves plus medians).

All CSVs are UTF-8 with LF line endings and headers; floats carry 17
significant digits, which round-trips 64-bit values exactly.  Emission is
deterministic: identical summaries give byte-identical files.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bkmr import ExposureResponse, OverallEffect, PipTable
from .data import Dataset, GroupSpec
from .errors import DataError
from .sweep import BkmrSeedResult, LassoSeedResult, SeedOutcome, SweepSummary
from .wqs import PooledEstimate, WqsFit

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ColumnRoles:
    """Mapping of CSV columns onto outcome, exposures and covariates."""

    outcome: str
    exposures: tuple[str, ...]
    covariates: tuple[str, ...] = ()
    groups: dict[str, tuple[str, ...]] | None = None


def _fmt(x) -> str:
    """17-significant-digit decimal; empty string for missing."""
    if x is None:
        return ""
    return format(float(x), ".17g")


def load_csv(path, roles: ColumnRoles) -> Dataset:
    """Parse an RFC-4180 CSV into a Dataset, rejecting bad cells with location.

    Row order is preserved.  Errors name the offending file line (counting
    the header as line 1) and column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header required") from None
        raw_rows = list(reader)
    if not raw_rows:
        raise DataError(f"{path}: no data rows")

    seen: dict[str, int] = {}
    for i, name in enumerate(header):
        if name in seen:
            raise DataError(f"{path}: duplicate column '{name}' in header")
        seen[name] = i
    needed = [roles.outcome, *roles.exposures, *roles.covariates]
    for name in needed:
        if name not in seen:
            raise DataError(f"{path}: column '{name}' not found in header")
    if len(set(needed)) != len(needed):
        raise DataError(f"{path}: a column is referenced by more than one role")

    def parse(row_idx: int, row: list[str], name: str) -> float:
        line = row_idx + 2  # 1-based, header is line 1
        col = seen[name]
        if col >= len(row):
            raise DataError(f"{path}: line {line} has too few fields (column '{name}')")
        cell = row[col].strip()
        if cell == "":
            raise DataError(f"{path}: empty cell at line {line}, column '{name}'")
        try:
            value = float(cell)
        except ValueError:
            raise DataError(
                f"{path}: non-numeric cell '{cell}' at line {line}, column '{name}'"
            ) from None
        if not np.isfinite(value):
            raise DataError(f"{path}: non-finite value at line {line}, column '{name}'")
        return value

    n = len(raw_rows)
    y = np.array([parse(i, r, roles.outcome) for i, r in enumerate(raw_rows)])
    Z = np.empty((n, len(roles.exposures)))
    for j, name in enumerate(roles.exposures):
        Z[:, j] = [parse(i, r, name) for i, r in enumerate(raw_rows)]
    cov = np.empty((n, len(roles.covariates)))
    for j, name in enumerate(roles.covariates):
        cov[:, j] = [parse(i, r, name) for i, r in enumerate(raw_rows)]

    groups = _groups_from_names(roles.groups, roles.exposures)
    return Dataset.assemble(
        y,
        Z,
        covariates=cov,
        exposure_names=tuple(roles.exposures),
        covariate_names=tuple(roles.covariates),
        groups=groups,
    )


def _groups_from_names(groups, exposures) -> GroupSpec:
    exposures = tuple(exposures)
    if not groups:
        return GroupSpec(np.zeros(len(exposures), dtype=np.int64), ("all",))
    index = {name: j for j, name in enumerate(exposures)}
    assignments = np.full(len(exposures), -1, dtype=np.int64)
    names = []
    for g, (gname, members) in enumerate(groups.items()):
        names.append(gname)
        for member in members:
            if member not in index:
                raise DataError(f"group '{gname}' references unknown exposure '{member}'")
            if assignments[index[member]] != -1:
                raise DataError(f"exposure '{member}' assigned to more than one group")
            assignments[index[member]] = g
    unassigned = [exposures[j] for j in range(len(exposures)) if assignments[j] == -1]
    if unassigned:
        raise DataError(f"exposures missing a group: {unassigned}")
    return GroupSpec(assignments, tuple(names))


def write_dataset(dataset: Dataset, path, outcome_name: str = "y") -> None:
    """CSV with outcome, exposures and non-intercept covariates, 17 digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cov_cols = [j for j in range(dataset.c) if j != dataset.intercept_index]
    header = [outcome_name, *dataset.exposure_names] + [
        dataset.covariate_names[j] for j in cov_cols
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [_fmt(dataset.y[i])]
            row += [_fmt(v) for v in dataset.Z[i]]
            row += [_fmt(dataset.X[i, j]) for j in cov_cols]
            writer.writerow(row)


# ---------------------------------------------------------------------------
# summary serialization


def _arr(x):
    return None if x is None else np.asarray(x).tolist()


def summary_to_dict(summary: SweepSummary) -> dict:
    pooled = None
    if summary.pooled_index is not None:
        p = summary.pooled_index
        pooled = {
            "estimate": p.estimate,
            "within_var": p.within_var,
            "between_var": p.between_var,
            "total_var": p.total_var,
            "df": p.df,
            "ci95": list(p.ci95),
            "m": p.m,
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "model": summary.model,
        "seeds": list(summary.seeds),
        "failures": [[s, msg] for s, msg in summary.failures],
        "exposure_names": list(summary.exposure_names),
        "coefficients": None
        if summary.coefficients is None
        else [
            {
                "name": c.name,
                "per_seed": _arr(c.per_seed),
                "proportion_nonzero": c.proportion_nonzero,
                "median": c.median,
                "iqr_low": c.iqr_low,
                "iqr_high": c.iqr_high,
                "min": c.min,
                "max": c.max,
            }
            for c in summary.coefficients
        ],
        "chosen_lambdas": _arr(summary.chosen_lambdas),
        "retained_counts": None
        if summary.retained_counts is None
        else {str(k): v for k, v in sorted(summary.retained_counts.items())},
        "grid_values": _arr(summary.grid_values),
        "cv_mean_errors": _arr(summary.cv_mean_errors),
        "cv_se_errors": _arr(summary.cv_se_errors),
        "weights": None
        if summary.weights is None
        else [
            {
                "name": w.name,
                "per_seed": _arr(w.per_seed),
                "proportion_above_tau": w.proportion_above_tau,
                "median": w.median,
                "iqr_low": w.iqr_low,
                "iqr_high": w.iqr_high,
                "min": w.min,
                "max": w.max,
                "largest_count": w.largest_count,
            }
            for w in summary.weights
        ],
        "tau": summary.tau,
        "index_estimates": _arr(summary.index_estimates),
        "pooled_index": pooled,
        "flagged_seeds": None if summary.flagged_seeds is None else list(summary.flagged_seeds),
        "wqs_residual_df": summary.wqs_residual_df,
        "pip_groups": _pip_rows_to_dict(summary.pip_groups),
        "pip_conditionals": _pip_rows_to_dict(summary.pip_conditionals),
        "rhat_log_post": _arr(summary.rhat_log_post),
        "curves": None
        if summary.curves is None
        else [
            {
                "name": c.name,
                "grid": _arr(c.grid),
                "per_seed": _arr(c.per_seed),
                "median": _arr(c.median),
            }
            for c in summary.curves
        ],
        "overall_effects": None
        if summary.overall_effects is None
        else {str(k): _arr(v) for k, v in sorted(summary.overall_effects.items())},
    }


def _pip_rows_to_dict(rows):
    if rows is None:
        return None
    return [
        {
            "name": r.name,
            "group": r.group,
            "per_seed": _arr(r.per_seed),
            "min": r.min,
            "median": r.median,
            "max": r.max,
        }
        for r in rows
    ]


def summary_from_dict(d: dict) -> SweepSummary:
    from .sweep import CoefficientSummary, CurveSummary, PipSummaryRow, WeightSummary

    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataError(f"unsupported summary schema version: {version!r}")
    pooled = None
    if d.get("pooled_index") is not None:
        p = d["pooled_index"]
        pooled = PooledEstimate(
            estimate=p["estimate"],
            within_var=p["within_var"],
            between_var=p["between_var"],
            total_var=p["total_var"],
            df=p["df"],
            ci95=tuple(p["ci95"]),
            m=p["m"],
        )

    def arr(x):
        return None if x is None else np.asarray(x, dtype=np.float64)

    def pips(rows):
        if rows is None:
            return None
        return tuple(
            PipSummaryRow(
                name=r["name"],
                group=r["group"],
                per_seed=np.asarray(r["per_seed"], dtype=np.float64),
                min=r["min"],
                median=r["median"],
                max=r["max"],
            )
            for r in rows
        )

    return SweepSummary(
        model=d["model"],
        seeds=tuple(int(s) for s in d["seeds"]),
        failures=tuple((int(s), msg) for s, msg in d["failures"]),
        exposure_names=tuple(d["exposure_names"]),
        coefficients=None
        if d.get("coefficients") is None
        else tuple(
            CoefficientSummary(
                name=c["name"],
                per_seed=np.asarray(c["per_seed"], dtype=np.float64),
                proportion_nonzero=c["proportion_nonzero"],
                median=c["median"],
                iqr_low=c["iqr_low"],
                iqr_high=c["iqr_high"],
                min=c["min"],
                max=c["max"],
            )
            for c in d["coefficients"]
        ),
        chosen_lambdas=arr(d.get("chosen_lambdas")),
        retained_counts=None
        if d.get("retained_counts") is None
        else {int(k): int(v) for k, v in d["retained_counts"].items()},
        grid_values=arr(d.get("grid_values")),
        cv_mean_errors=arr(d.get("cv_mean_errors")),
        cv_se_errors=arr(d.get("cv_se_errors")),
        weights=None
        if d.get("weights") is None
        else tuple(
            WeightSummary(
                name=w["name"],
                per_seed=np.asarray(w["per_seed"], dtype=np.float64),
                proportion_above_tau=w["proportion_above_tau"],
                median=w["median"],
                iqr_low=w["iqr_low"],
                iqr_high=w["iqr_high"],
                min=w["min"],
                max=w["max"],
                largest_count=w["largest_count"],
            )
            for w in d["weights"]
        ),
        tau=d.get("tau"),
        index_estimates=arr(d.get("index_estimates")),
        pooled_index=pooled,
        flagged_seeds=None
        if d.get("flagged_seeds") is None
        else tuple(int(s) for s in d["flagged_seeds"]),
        wqs_residual_df=None
        if d.get("wqs_residual_df") is None
        else int(d["wqs_residual_df"]),
        pip_groups=pips(d.get("pip_groups")),
        pip_conditionals=pips(d.get("pip_conditionals")),
        rhat_log_post=arr(d.get("rhat_log_post")),
        curves=None
        if d.get("curves") is None
        else tuple(
            CurveSummary(
                name=c["name"],
                grid=np.asarray(c["grid"], dtype=np.float64),
                per_seed=np.asarray(c["per_seed"], dtype=np.float64),
                median=np.asarray(c["median"], dtype=np.float64),
            )
            for c in d["curves"]
        ),
        overall_effects=None
        if d.get("overall_effects") is None
        else {
            float(k): np.asarray(v, dtype=np.float64)
            for k, v in d["overall_effects"].items()
        },
    )


def load_summary(path) -> SweepSummary:
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    if not path.exists():
        raise DataError(f"summary file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return summary_from_dict(json.load(fh))


def rebuild_outcomes(summary: SweepSummary) -> list[SeedOutcome]:
    """Reconstruct per-seed payload stubs from a saved summary.

    The stubs carry exactly the per-seed values the ``summarize_*``
    functions read, which is what lets the CLI re-aggregate previously
    saved results without re-running any model.
    """
    seeds = summary.seeds
    outcomes: list[SeedOutcome] = []
    if summary.model in ("lasso", "group_lasso"):
        betas = np.stack([c.per_seed for c in summary.coefficients], axis=1)
        for i, seed in enumerate(seeds):
            payload = LassoSeedResult(
                seed=seed,
                chosen_lambda=float(summary.chosen_lambdas[i]),
                cv_mean_error=summary.cv_mean_errors[i],
                cv_se_error=summary.cv_se_errors[i],
                beta=betas[i],
            )
            outcomes.append(SeedOutcome(seed=seed, payload=payload, error=None))
    elif summary.model == "wqs":
        W = np.stack([w.per_seed for w in summary.weights], axis=1)
        flagged = set(summary.flagged_seeds or ())
        if summary.wqs_residual_df is None:
            raise DataError("summary is missing the WQS residual df; cannot re-pool")
        for i, seed in enumerate(seeds):
            est = summary.index_estimates[i]
            payload = WqsFit(
                weights=W[i],
                index_beta=float(est[0]),
                index_se=float(est[1]),
                ci95=(float(est[2]), float(est[3])),
                train_indices=np.zeros(0, dtype=np.int64),
                test_indices=np.zeros(0, dtype=np.int64),
                seed=seed,
                flagged=seed in flagged,
                n_direction_matched=0 if seed in flagged else 1,
                residual_df=int(summary.wqs_residual_df),
            )
            outcomes.append(SeedOutcome(seed=seed, payload=payload, error=None))
    else:
        gp = np.stack([r.per_seed for r in summary.pip_groups], axis=1)
        cp = np.stack([r.per_seed for r in summary.pip_conditionals], axis=1)
        for i, seed in enumerate(seeds):
            pips = PipTable(
                group_pips=gp[i],
                conditional_pips=cp[i],
                conditional_defined=np.ones(cp.shape[1], dtype=bool),
            )
            curves = None
            if summary.curves is not None:
                curves = tuple(
                    ExposureResponse(
                        exposure=j,
                        grid=c.grid,
                        mean=c.per_seed[i],
                        lower=c.per_seed[i],
                        upper=c.per_seed[i],
                    )
                    for j, c in enumerate(summary.curves)
                )
            overall = None
            if summary.overall_effects is not None:
                overall = tuple(
                    OverallEffect(
                        percentile=q, mean=float(rows[i, 0]),
                        lower=float(rows[i, 1]), upper=float(rows[i, 2]),
                    )
                    for q, rows in sorted(summary.overall_effects.items())
                )
            payload = BkmrSeedResult(
                seed=seed,
                pips=pips,
                rhat_log_post=float(summary.rhat_log_post[i]),
                curves=curves,
                overall=overall,
            )
            outcomes.append(SeedOutcome(seed=seed, payload=payload, error=None))
    for seed, msg in summary.failures:
        outcomes.append(SeedOutcome(seed=seed, payload=None, error=msg))
    outcomes.sort(key=lambda o: o.seed)
    return outcomes


def reaggregate(summary: SweepSummary) -> SweepSummary:
    """Recompute every aggregate from the per-seed values in a saved summary."""
    from .sweep import (
        CurveSummary,
        summarize_coefficients,
        summarize_pips,
        summarize_weights,
    )

    outcomes = rebuild_outcomes(summary)
    if summary.model in ("lasso", "group_lasso"):
        fresh = summarize_coefficients(outcomes, summary.exposure_names, model=summary.model)
        fresh.grid_values = summary.grid_values
        return fresh
    if summary.model == "wqs":
        if summary.tau is None:
            raise DataError("summary is missing tau; cannot re-aggregate weights")
        return summarize_weights(outcomes, summary.exposure_names, summary.tau)
    gnames = tuple(r.name for r in summary.pip_groups)
    gindex = {name: i for i, name in enumerate(gnames)}
    assignments = np.asarray(
        [gindex[r.group] for r in summary.pip_conditionals], dtype=np.int64
    )
    fresh = summarize_pips(outcomes, summary.exposure_names, gnames, assignments)
    if summary.curves is not None:
        fresh.curves = tuple(
            CurveSummary(
                name=c.name,
                grid=c.grid,
                per_seed=c.per_seed,
                median=np.quantile(c.per_seed, 0.5, axis=0, method="linear"),
            )
            for c in summary.curves
        )
    fresh.overall_effects = summary.overall_effects
    return fresh


# ---------------------------------------------------------------------------
# emission


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _coefficients_rows(summary: SweepSummary):
    for coef in summary.coefficients:
        for seed, value in zip(summary.seeds, coef.per_seed):
            yield ["seed", coef.name, seed, _fmt(value), "", "", "", "", "", ""]
    for coef in summary.coefficients:
        yield [
            "aggregate", coef.name, "", "",
            _fmt(coef.proportion_nonzero), _fmt(coef.median),
            _fmt(coef.iqr_low), _fmt(coef.iqr_high), _fmt(coef.min), _fmt(coef.max),
        ]


def _weights_rows(summary: SweepSummary):
    for w in summary.weights:
        for seed, value in zip(summary.seeds, w.per_seed):
            yield ["seed", w.name, seed, _fmt(value), "", "", "", "", "", "", ""]
    for w in summary.weights:
        yield [
            "aggregate", w.name, "", "",
            _fmt(w.proportion_above_tau), _fmt(w.median), _fmt(w.iqr_low),
            _fmt(w.iqr_high), _fmt(w.min), _fmt(w.max), w.largest_count,
        ]


def _pips_rows(summary: SweepSummary):
    for row in summary.pip_groups:
        for seed, value in zip(summary.seeds, row.per_seed):
            yield ["seed", "group", "", row.name, seed, _fmt(value), "", "", ""]
    for row in summary.pip_conditionals:
        for seed, value in zip(summary.seeds, row.per_seed):
            yield ["seed", "congener", row.group, row.name, seed, _fmt(value), "", "", ""]
    for row in summary.pip_groups:
        yield ["aggregate", "group", "", row.name, "", "",
               _fmt(row.min), _fmt(row.median), _fmt(row.max)]
    for row in summary.pip_conditionals:
        yield ["aggregate", "congener", row.group, row.name, "", "",
               _fmt(row.min), _fmt(row.median), _fmt(row.max)]


def _cv_rows(summary: SweepSummary):
    grid = summary.grid_values
    for i, seed in enumerate(summary.seeds):
        chosen = summary.chosen_lambdas[i]
        for j, lam in enumerate(grid):
            yield [
                seed, _fmt(lam), _fmt(summary.cv_mean_errors[i, j]),
                _fmt(summary.cv_se_errors[i, j]), 1 if lam == chosen else 0,
            ]


def _index_rows(summary: SweepSummary):
    for i, seed in enumerate(summary.seeds):
        beta, se, lo, hi = summary.index_estimates[i]
        yield ["seed", seed, _fmt(beta), _fmt(se), _fmt(lo), _fmt(hi)]
    p = summary.pooled_index
    yield ["pooled", "", _fmt(p.estimate), _fmt(np.sqrt(p.total_var)),
           _fmt(p.ci95[0]), _fmt(p.ci95[1])]


def _curve_rows(summary: SweepSummary):
    for c in summary.curves:
        for i, seed in enumerate(summary.seeds):
            for j, g in enumerate(c.grid):
                yield ["seed", c.name, seed, _fmt(g), _fmt(c.per_seed[i, j])]
        for j, g in enumerate(c.grid):
            yield ["median", c.name, "", _fmt(g), _fmt(c.median[j])]


def emit_outputs(summary: SweepSummary, outdir, fmt: str = "csv") -> list[Path]:
    """Write summary.json plus the model-appropriate CSV tables.

    ``fmt="json"`` writes only summary.json.  Returns the written paths.
    """
    if fmt not in ("csv", "json"):
        raise DataError(f"unknown output format '{fmt}'")
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {outdir}: {exc}") from None
    written: list[Path] = []

    spath = outdir / "summary.json"
    payload = json.dumps(summary_to_dict(summary), sort_keys=True, indent=2)
    with open(spath, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(payload)
        fh.write("\n")
    written.append(spath)
    if fmt == "json":
        return written

    if summary.coefficients is not None:
        path = outdir / "coefficients.csv"
        _write_csv(
            path,
            ["record", "name", "seed", "beta", "proportion_nonzero", "median",
             "iqr_low", "iqr_high", "min", "max"],
            _coefficients_rows(summary),
        )
        written.append(path)
    if summary.cv_mean_errors is not None and summary.grid_values is not None:
        path = outdir / "cv_curves.csv"
        _write_csv(
            path,
            ["seed", "lambda", "mean_error", "se_error", "is_chosen"],
            _cv_rows(summary),
        )
        written.append(path)
    if summary.weights is not None:
        path = outdir / "weights.csv"
        _write_csv(
            path,
            ["record", "name", "seed", "weight", "proportion_above_tau", "median",
             "iqr_low", "iqr_high", "min", "max", "largest_count"],
            _weights_rows(summary),
        )
        written.append(path)
    if summary.index_estimates is not None:
        path = outdir / "index_estimates.csv"
        _write_csv(
            path,
            ["record", "seed", "estimate", "se", "ci_low", "ci_high"],
            _index_rows(summary),
        )
        written.append(path)
    if summary.pip_groups is not None:
        path = outdir / "pips.csv"
        _write_csv(
            path,
            ["record", "level", "group", "name", "seed", "pip", "min", "median", "max"],
            _pips_rows(summary),
        )
        written.append(path)
    if summary.curves is not None:
        path = outdir / "exposure_response.csv"
        _write_csv(
            path,
            ["record", "exposure", "seed", "grid_value", "value"],
            _curve_rows(summary),
        )
        written.append(path)
    return written
