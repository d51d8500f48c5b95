"""CSV ingestion, emission contracts, summary round-trips, CLI exit codes."""

import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from seedsweep.cli import cli_main, parse_seed_spec
from seedsweep.dataio import (
    ColumnRoles,
    emit_outputs,
    load_csv,
    load_summary,
    reaggregate,
    summary_from_dict,
    summary_to_dict,
    write_dataset,
)
from seedsweep.errors import ConfigError, DataError
from seedsweep.sweep import (
    PenalizedSweepConfig,
    SweepConfig,
    run_sweep,
    summarize,
)
from seedsweep.synth import SyntheticSpec, generate_synthetic
from tests.test_sweep import make_lasso_outcome, make_wqs_outcome
from seedsweep.sweep import summarize_coefficients, summarize_weights


ROLES = ColumnRoles(outcome="y", exposures=("z1", "z2"), covariates=("age",))


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        path = write(tmp_path, "y,z1,z2,age\n1,2,3,4\n5,6,7,8\n9,10,11,12\n")
        d = load_csv(path, ROLES)
        assert d.n == 3
        assert d.exposure_names == ("z1", "z2")
        assert np.array_equal(d.Z, [[2, 3], [6, 7], [10, 11]])
        assert np.array_equal(d.X[:, 0], [1, 1, 1])  # intercept added

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_csv(tmp_path / "absent.csv", ROLES)

    def test_missing_column(self, tmp_path):
        path = write(tmp_path, "y,z1,age\n1,2,3\n4,5,6\n")
        with pytest.raises(DataError, match="'z2' not found"):
            load_csv(path, ROLES)

    def test_empty_cell_names_location(self, tmp_path):
        path = write(tmp_path, "y,z1,z2,age\n1,2,3,4\n5,,7,8\n")
        with pytest.raises(DataError, match="line 3, column 'z1'"):
            load_csv(path, ROLES)

    def test_non_numeric_cell(self, tmp_path):
        path = write(tmp_path, "y,z1,z2,age\n1,2,3,4\n5,oops,7,8\n")
        with pytest.raises(DataError, match="non-numeric cell 'oops' at line 3"):
            load_csv(path, ROLES)

    def test_non_finite_rejected(self, tmp_path):
        path = write(tmp_path, "y,z1,z2,age\n1,2,3,4\n5,nan,7,8\n")
        with pytest.raises(DataError, match="non-finite"):
            load_csv(path, ROLES)

    def test_short_row(self, tmp_path):
        path = write(tmp_path, "y,z1,z2,age\n1,2,3,4\n5,6\n")
        with pytest.raises(DataError, match="too few fields"):
            load_csv(path, ROLES)

    def test_duplicate_header(self, tmp_path):
        path = write(tmp_path, "y,z1,z1,age\n1,2,3,4\n")
        with pytest.raises(DataError, match="duplicate column"):
            load_csv(path, ROLES)

    def test_groups_validated(self, tmp_path):
        path = write(tmp_path, "y,z1,z2,age\n1,2,3,4\n5,6,7,8\n")
        roles = ColumnRoles(
            outcome="y", exposures=("z1", "z2"), covariates=("age",),
            groups={"a": ("z1",), "b": ("zX",)},
        )
        with pytest.raises(DataError, match="unknown exposure 'zX'"):
            load_csv(path, roles)
        roles = ColumnRoles(
            outcome="y", exposures=("z1", "z2"), covariates=("age",),
            groups={"a": ("z1",)},
        )
        with pytest.raises(DataError, match="missing a group"):
            load_csv(path, roles)

    def test_round_trip_exact(self, tmp_path):
        d = generate_synthetic(SyntheticSpec(n=25, p=3, seed=9))
        path = tmp_path / "rt.csv"
        write_dataset(d, path)
        roles = ColumnRoles(
            outcome="y", exposures=d.exposure_names, covariates=("x1", "x2")
        )
        back = load_csv(path, roles)
        assert np.array_equal(back.y, d.y)
        assert np.array_equal(back.Z, d.Z)
        assert np.array_equal(back.X, d.X)


def lasso_summary(n_seeds=100, p=18):
    rng = np.random.default_rng(0)
    outcomes = [
        make_lasso_outcome(s, rng.normal(size=p) * rng.binomial(1, 0.7, size=p))
        for s in range(1, n_seeds + 1)
    ]
    summary = summarize_coefficients(
        outcomes, tuple(f"z{j}" for j in range(1, p + 1))
    )
    summary.grid_values = np.array([1.0, 0.5])
    return summary


class TestEmission:
    def test_coefficients_row_arithmetic(self, tmp_path):
        summary = lasso_summary()
        paths = emit_outputs(summary, tmp_path)
        table = (tmp_path / "coefficients.csv").read_text().splitlines()
        assert len(table) == 1 + 100 * 18 + 18  # header + per-seed + aggregates
        assert (tmp_path / "summary.json") in paths

    def test_json_round_trip(self, tmp_path):
        summary = lasso_summary(n_seeds=7, p=3)
        emit_outputs(summary, tmp_path)
        loaded = load_summary(tmp_path)
        assert summary_to_dict(loaded) == summary_to_dict(summary)

    def test_emission_deterministic(self, tmp_path):
        summary = lasso_summary(n_seeds=5, p=2)
        a = tmp_path / "a"
        b = tmp_path / "b"
        emit_outputs(summary, a)
        emit_outputs(summary, b)
        for name in ("summary.json", "coefficients.csv", "cv_curves.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_lf_line_endings(self, tmp_path):
        emit_outputs(lasso_summary(n_seeds=3, p=2), tmp_path)
        raw = (tmp_path / "coefficients.csv").read_bytes()
        assert b"\r" not in raw

    def test_json_only_format(self, tmp_path):
        paths = emit_outputs(lasso_summary(n_seeds=3, p=2), tmp_path, fmt="json")
        assert [p.name for p in paths] == ["summary.json"]

    def test_unwritable_target_surfaced(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(DataError, match="cannot create"):
            emit_outputs(lasso_summary(3, 2), blocker / "sub")

    def test_wqs_summary_round_trip_and_reaggregate(self, tmp_path):
        outcomes = [
            make_wqs_outcome(s, [0.6, 0.4], beta=0.5 + 0.01 * s, se=0.2)
            for s in range(1, 9)
        ]
        summary = summarize_weights(outcomes, ("a", "b"), 0.5)
        emit_outputs(summary, tmp_path)
        loaded = load_summary(tmp_path)
        again = reaggregate(loaded)
        assert summary_to_dict(again) == summary_to_dict(summary)

    def test_17_digit_round_trip(self, tmp_path):
        value = 0.1234567890123456789  # not representable, rounds to nearest double
        summary = lasso_summary(n_seeds=1, p=1)
        summary.coefficients[0].per_seed[0] = value
        emit_outputs(summary, tmp_path)
        row = (tmp_path / "coefficients.csv").read_text().splitlines()[1].split(",")
        assert float(row[3]) == summary.coefficients[0].per_seed[0]


class TestSeedSpec:
    def test_range(self):
        assert parse_seed_spec("1..5") == (1, 2, 3, 4, 5)

    def test_comma_list(self):
        assert parse_seed_spec("4, 8,15") == (4, 8, 15)

    def test_toml_array(self):
        assert parse_seed_spec([3, 1]) == (3, 1)

    def test_bad_specs(self):
        with pytest.raises(ConfigError):
            parse_seed_spec("5..1")
        with pytest.raises(ConfigError):
            parse_seed_spec("a,b")


CONFIG = """
[run]
model = "lasso"
seeds = "1..4"
output = "{out}"
jobs = 1
format = "csv"

[synthetic]
n = 90
p = 4
groups = 2
rho = 0.2
truth = "linear"
beta = [0.5, 0.3, 0.0, 0.0]
noise_sd = 1.0
seed = 7

[lasso]
folds = 3
n_lambda = 10
"""


def write_config(tmp_path, text=None, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text if text is not None else CONFIG.format(out=tmp_path / "out"))
    return path


class TestCli:
    def test_happy_path_run(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert cli_main(["run", "--config", str(cfg)]) == 0
        assert (tmp_path / "out" / "summary.json").exists()
        assert "4/4 seeds succeeded" in capsys.readouterr().out

    def test_missing_config_is_usage_error(self, tmp_path, capsys):
        assert cli_main(["run", "--config", str(tmp_path / "nope.toml")]) == 1
        assert "E-USAGE" in capsys.readouterr().err

    def test_bad_flag_is_usage_error(self, capsys):
        assert cli_main(["run", "--bogus"]) == 1
        assert "E-USAGE" in capsys.readouterr().err

    def test_absent_column_is_data_error(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        data.write_text("y,z1\n1,2\n3,4\n")
        cfg = write_config(
            tmp_path,
            f"""
[run]
model = "lasso"
seeds = "1..2"
output = "{tmp_path / 'out'}"

[input]
path = "{data}"
outcome = "y"
exposures = ["z1", "z_missing"]
""",
        )
        assert cli_main(["run", "--config", str(cfg)]) == 2
        assert "z_missing" in capsys.readouterr().err

    def test_validate_checks_without_running(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert cli_main(["validate", "--config", str(cfg)]) == 0
        out = capsys.readouterr().out
        assert out.startswith("OK:")
        assert not (tmp_path / "out").exists()

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = write_config(tmp_path, CONFIG.format(out=tmp_path) + "\n[lasso2]\nx = 1\n")
        assert cli_main(["validate", "--config", str(cfg)]) == 1
        assert "lasso2" in capsys.readouterr().err

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "other"
        assert (
            cli_main(
                ["run", "--config", str(cfg), "--seeds", "2,3", "--out", str(out)]
            )
            == 0
        )
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seeds"] == [2, 3]

    def test_synth_round_trip(self, tmp_path):
        cfg = write_config(tmp_path)
        target = tmp_path / "synthetic.csv"
        assert cli_main(["synth", "--config", str(cfg), "--out", str(target)]) == 0
        spec = SyntheticSpec(
            n=90, p=4, n_groups=2, rho=0.2, truth="linear",
            beta=(0.5, 0.3, 0.0, 0.0), noise_sd=1.0, seed=7,
        )
        expected = generate_synthetic(spec)
        roles = ColumnRoles(
            outcome="y", exposures=expected.exposure_names, covariates=("x1", "x2")
        )
        back = load_csv(target, roles)
        assert np.array_equal(back.Z, expected.Z)

    def test_summarize_reaggregates(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli_main(["run", "--config", str(cfg)]) == 0
        redo = tmp_path / "redo"
        assert cli_main(["summarize", str(tmp_path / "out"), "--out", str(redo)]) == 0
        a = json.loads((tmp_path / "out" / "summary.json").read_text())
        b = json.loads((redo / "summary.json").read_text())
        assert a["coefficients"] == b["coefficients"]
        assert a["chosen_lambdas"] == b["chosen_lambdas"]

    def test_jobs_env_default(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path)
        monkeypatch.setenv("SEEDSWEEP_JOBS", "not-a-number")
        assert cli_main(["validate", "--config", str(cfg)]) == 1
        monkeypatch.setenv("SEEDSWEEP_JOBS", "2")
        assert cli_main(["validate", "--config", str(cfg)]) == 0

    def test_format_json_skips_csv(self, tmp_path):
        cfg = write_config(tmp_path)
        assert cli_main(["run", "--config", str(cfg), "--format", "json"]) == 0
        out = tmp_path / "out"
        assert (out / "summary.json").exists()
        assert not (out / "coefficients.csv").exists()

    def test_console_entry_point(self, tmp_path):
        cfg = write_config(tmp_path)
        proc = subprocess.run(
            [sys.executable, "-m", "seedsweep.cli", "validate", "--config", str(cfg)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert proc.stdout.startswith("OK:")
