"""Command-line entry point.

Subcommands:

* ``run``        execute a multi-seed sweep described by a TOML config
* ``synth``      emit a synthetic dataset CSV from the config's [synthetic] table
* ``summarize``  re-aggregate previously saved per-seed results
* ``validate``   check a config (and its dataset) without running anything

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 runtime or
model error.  Every error line starts with a stable greppable prefix:
``E-USAGE:``, ``E-DATA:`` or ``E-MODEL:``.  The ``SEEDSWEEP_JOBS``
environment variable supplies the default for ``--jobs``.
"""

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError, DataError, SeedSweepError


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through our exit codes
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="seedsweep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a sweep from a config file")
    run.add_argument("--config", required=True, help="TOML run configuration")
    run.add_argument("--model", help="override the configured model")
    run.add_argument("--seeds", help="override seeds: 'a..b' (inclusive) or comma list")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--jobs", type=int, help="worker processes (default: SEEDSWEEP_JOBS or 1)")
    run.add_argument("--format", choices=("csv", "json"), help="override output format")

    synth = sub.add_parser("synth", help="emit a synthetic dataset CSV")
    synth.add_argument("--config", required=True, help="TOML config with a [synthetic] table")
    synth.add_argument("--out", required=True, help="CSV file to write")

    summ = sub.add_parser("summarize", help="re-aggregate saved per-seed results")
    summ.add_argument("input", help="summary.json or a directory containing one")
    summ.add_argument("--out", required=True, help="output directory")
    summ.add_argument("--format", choices=("csv", "json"), default="csv")

    val = sub.add_parser("validate", help="validate a config and dataset without running")
    val.add_argument("--config", required=True, help="TOML run configuration")
    return parser


def parse_seed_spec(spec) -> tuple[int, ...]:
    """Seed lists: '<a>..<b>' inclusive, a comma list, or a TOML int array."""
    if isinstance(spec, (list, tuple)):
        try:
            return tuple(int(s) for s in spec)
        except (TypeError, ValueError):
            raise ConfigError(f"seed list contains a non-integer: {spec!r}") from None
    text = str(spec).strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            lo_i, hi_i = int(lo), int(hi)
        except ValueError:
            raise ConfigError(f"bad seed range '{text}'") from None
        if hi_i < lo_i:
            raise ConfigError(f"empty seed range '{text}'")
        return tuple(range(lo_i, hi_i + 1))
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError:
        raise ConfigError(f"bad seed list '{text}'") from None


@dataclass
class RunPlan:
    model: str
    seeds: tuple[int, ...]
    output: str
    jobs: int
    fmt: str
    dataset: object
    sweep_config: object


def _load_toml(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from None


def _check_keys(section: str, table: dict, allowed: set[str]) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _synthetic_spec(table: dict):
    from .synth import SyntheticSpec

    _check_keys(
        "synthetic", table,
        {"n", "p", "groups", "rho", "truth", "beta", "noise_sd", "seed"},
    )
    for key in ("n", "p"):
        if key not in table:
            raise ConfigError(f"[synthetic] is missing '{key}'")
    return SyntheticSpec(
        n=int(table["n"]),
        p=int(table["p"]),
        n_groups=int(table.get("groups", 1)),
        rho=float(table.get("rho", 0.0)),
        truth=table.get("truth", "null"),
        beta=None if table.get("beta") is None else tuple(float(b) for b in table["beta"]),
        noise_sd=float(table.get("noise_sd", 1.0)),
        seed=int(table.get("seed", 0)),
    )


def _dataset_from_config(config: dict):
    from .dataio import ColumnRoles, load_csv
    from .synth import generate_synthetic

    has_input = "input" in config
    has_synth = "synthetic" in config
    if has_input == has_synth:
        raise ConfigError("config needs exactly one of [input] or [synthetic]")
    if has_synth:
        return generate_synthetic(_synthetic_spec(config["synthetic"]))
    table = dict(config["input"])
    _check_keys("input", table, {"path", "outcome", "exposures", "covariates", "groups"})
    for key in ("path", "outcome", "exposures"):
        if key not in table:
            raise ConfigError(f"[input] is missing '{key}'")
    groups = table.get("groups")
    roles = ColumnRoles(
        outcome=table["outcome"],
        exposures=tuple(table["exposures"]),
        covariates=tuple(table.get("covariates", ())),
        groups=None if groups is None else {k: tuple(v) for k, v in groups.items()},
    )
    return load_csv(table["path"], roles)


def _model_config(model: str, config: dict):
    from .bkmr import BkmrConfig
    from .sweep import BkmrSweepConfig, PenalizedSweepConfig, WqsSweepConfig
    from .wqs import WqsConfig

    if model in ("lasso", "group_lasso"):
        table = dict(config.get(model, {}))
        _check_keys(
            model, table,
            {"folds", "n_lambda", "lambda_min_ratio", "one_se", "standardize_covariates"},
        )
        return PenalizedSweepConfig(
            folds=int(table.get("folds", 10)),
            n_lambda=int(table.get("n_lambda", 100)),
            lambda_min_ratio=float(table.get("lambda_min_ratio", 1e-4)),
            one_se=bool(table.get("one_se", False)),
            standardize_covariates=bool(table.get("standardize_covariates", False)),
        )
    if model == "wqs":
        table = dict(config.get("wqs", {}))
        _check_keys(
            "wqs", table, {"q", "train_fraction", "n_bootstrap", "direction", "tau"}
        )
        return WqsSweepConfig(
            wqs=WqsConfig(
                q=int(table.get("q", 4)),
                train_fraction=float(table.get("train_fraction", 0.4)),
                n_bootstrap=int(table.get("n_bootstrap", 100)),
                direction=table.get("direction", "positive"),
                tau=None if table.get("tau") is None else float(table["tau"]),
            )
        )
    table = dict(config.get("bkmr", {}))
    _check_keys(
        "bkmr", table,
        {"n_iter", "burn_in", "chains", "grid_points", "thin", "variable_selection",
         "lam_fixed", "r_proposal_sd", "lam_proposal_sd", "max_n",
         "compute_curves", "curve_exposures", "percentiles"},
    )
    bkmr = BkmrConfig(
        n_iter=int(table.get("n_iter", 5000)),
        burn_in=None if table.get("burn_in") is None else int(table["burn_in"]),
        n_chains=int(table.get("chains", 4)),
        grid_points=int(table.get("grid_points", 50)),
        thin=int(table.get("thin", 10)),
        variable_selection=bool(table.get("variable_selection", True)),
        lam_fixed=None if table.get("lam_fixed") is None else float(table["lam_fixed"]),
        r_proposal_sd=float(table.get("r_proposal_sd", 0.3)),
        lam_proposal_sd=float(table.get("lam_proposal_sd", 0.3)),
        max_n=int(table.get("max_n", 2000)),
    )
    return BkmrSweepConfig(
        bkmr=bkmr,
        compute_curves=bool(table.get("compute_curves", False)),
        curve_exposures=None
        if table.get("curve_exposures") is None
        else tuple(int(m) for m in table["curve_exposures"]),
        percentiles=tuple(float(q) for q in table.get("percentiles", (0.25, 0.75))),
    )


def _default_jobs(args_jobs) -> int:
    if args_jobs is not None:
        return int(args_jobs)
    env = os.environ.get("SEEDSWEEP_JOBS")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SEEDSWEEP_JOBS is not an integer: {env!r}") from None
    return 0  # 0: fall back to the config value


def build_plan(args) -> RunPlan:
    """Fully validated execution plan; no model computation happens here."""
    from .sweep import MODELS, SweepConfig

    config = _load_toml(args.config)
    known_sections = {"run", "input", "synthetic", "lasso", "group_lasso", "wqs", "bkmr"}
    _check_keys("<top level>", config, known_sections)
    run_table = dict(config.get("run", {}))
    _check_keys("run", run_table, {"model", "seeds", "output", "jobs", "format"})

    model = getattr(args, "model", None) or run_table.get("model")
    if model is None:
        raise ConfigError("no model given: set [run].model or pass --model")
    if model not in MODELS:
        raise ConfigError(f"unknown model '{model}'; expected one of {MODELS}")

    seed_spec = getattr(args, "seeds", None) or run_table.get("seeds", "1..100")
    seeds = parse_seed_spec(seed_spec)

    output = getattr(args, "out", None) or run_table.get("output")
    if output is None:
        raise ConfigError("no output directory: set [run].output or pass --out")

    jobs = _default_jobs(getattr(args, "jobs", None))
    if jobs == 0:
        jobs = int(run_table.get("jobs", 1))
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")

    fmt = getattr(args, "format", None) or run_table.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown format '{fmt}'")

    dataset = _dataset_from_config(config)
    model_config = _model_config(model, config)
    sweep_config = SweepConfig(
        model=model, model_config=model_config, seeds=seeds, parallelism=jobs
    )
    if model in ("group_lasso", "bkmr") and dataset.groups.n_groups == 1 and dataset.p > 1:
        # legal, but usually an oversight worth surfacing early
        print("note: all exposures share a single group", file=sys.stderr)
    return RunPlan(
        model=model, seeds=seeds, output=output, jobs=jobs, fmt=fmt,
        dataset=dataset, sweep_config=sweep_config,
    )


def _cmd_run(args) -> int:
    from .dataio import emit_outputs
    from .sweep import run_sweep, summarize

    plan = build_plan(args)
    outcomes = run_sweep(plan.dataset, plan.sweep_config)
    summary = summarize(plan.dataset, plan.sweep_config, outcomes)
    written = emit_outputs(summary, plan.output, plan.fmt)
    ok = sum(1 for o in outcomes if o.ok)
    print(f"{plan.model}: {ok}/{len(outcomes)} seeds succeeded")
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_synth(args) -> int:
    from .dataio import write_dataset
    from .synth import generate_synthetic

    config = _load_toml(args.config)
    if "synthetic" not in config:
        raise ConfigError("config has no [synthetic] table")
    dataset = generate_synthetic(_synthetic_spec(config["synthetic"]))
    write_dataset(dataset, args.out)
    print(f"wrote {args.out} ({dataset.n} rows, {dataset.p} exposures)")
    return 0


def _cmd_summarize(args) -> int:
    from .dataio import emit_outputs, load_summary, reaggregate

    summary = load_summary(args.input)
    fresh = reaggregate(summary)
    written = emit_outputs(fresh, args.out, args.format)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_validate(args) -> int:
    plan = build_plan(args)
    print(
        f"OK: model={plan.model} seeds={len(plan.seeds)} "
        f"n={plan.dataset.n} p={plan.dataset.p} out={plan.output}"
    )
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "synth": _cmd_synth,
    "summarize": _cmd_summarize,
    "validate": _cmd_validate,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"E-USAGE: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"E-DATA: {exc}", file=sys.stderr)
        return 2
    except SeedSweepError as exc:
        print(f"E-MODEL: {exc}", file=sys.stderr)
        return 3
    except SystemExit as exc:  # --help and friends
        code = exc.code if isinstance(exc.code, int) else 0
        return code


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
