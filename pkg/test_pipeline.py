import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

import config
import pipeline
from errors import ArgumentError, ConfigError, OutputError
from main import cli
from pipeline import (RESULT_COLUMNS, ExperimentReport, Failure, ResultRow, emit_summary,
                      linf_error, run_experiment, run_task)


def make_row(value=100, rep=0, estimator="ABC", linf=0.5, l1=1.0, l2=0.7, f=0.2):
    return ResultRow(value, rep, estimator, linf, l1, l2, f, 12.0, 0.1, 0.01, 0.2, 0.05)


@pytest.fixture(autouse=True)
def no_thread_override(monkeypatch):
    monkeypatch.delenv("PLM_DIVIDE_THREADS", raising=False)


@pytest.fixture
def smoke(smoke_config_path, tmp_path):
    return config.load_experiment_config(smoke_config_path, out=str(tmp_path / "out"))


class TestConfig:

    def test_load_smoke(self, smoke):
        assert smoke.scenario == "sweep_p"
        assert smoke.grid() == [config.GridPoint(10, 100, 10, 1)]
        assert smoke.swept_name() == "p"

    def test_overrides_and_env(self, smoke_config_path, monkeypatch):
        cfg = config.load_experiment_config(smoke_config_path, seed=99, workers=3)
        assert (cfg.seed, cfg.workers) == (99, 3)
        monkeypatch.setenv("PLM_DIVIDE_THREADS", "5")
        assert config.load_experiment_config(smoke_config_path, workers=3).workers == 5
        monkeypatch.setenv("PLM_DIVIDE_THREADS", "many")
        with pytest.raises(ConfigError):
            config.load_experiment_config(smoke_config_path)

    def test_desk_profile_caps(self):
        cfg = config.load_experiment_config(
            config.CONFIG_DIR / "fig1_dimension.toml", profile="desk")
        assert cfg.values == (100, 200)
        assert cfg.replications == 50
        fig2 = config.load_experiment_config(config.CONFIG_DIR / "fig2_machines.toml", profile="desk")
        assert fig2.p == 200

    def test_sweep_n_with_fixed_subsample(self):
        cfg = config.load_experiment_config(config.CONFIG_DIR / "fig3_sample_size.toml")
        assert [(g.N, g.m) for g in cfg.grid()] == [(2000, 10), (4000, 20), (6000, 30)]

    @pytest.mark.parametrize("text", [
        'scenario = "sweep_q"\nvalues = [1]\nN = 100\np = 10\n',
        'scenario = "sweep_m"\nvalues = [3]\nN = 100\np = 10\n',
        'scenario = "sweep_p"\nvalues = [10]\nN = 100\ncolour = "red"\n',
        'scenario = "sweep_p"\nvalues = [10\n',
    ])
    def test_invalid_files(self, tmp_path, text):
        path = tmp_path / "bad.toml"
        path.write_text(text)
        with pytest.raises(ConfigError):
            config.load_experiment_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            config.load_experiment_config(tmp_path / "nope.toml")


class TestSummary:

    def test_single_row(self, tmp_path):
        summary = emit_summary([make_row()], tmp_path / "summary.csv")
        linf = summary[summary.metric == "linf_error"].iloc[0]
        assert (linf["mean"], linf["se"], linf["median"], linf["count"]) == (0.5, 0.0, 0.5, 1)
        assert list(summary.columns) == ["value", "estimator", "metric", "mean", "se", "median", "count"]

    def test_two_rows_same_cell(self, tmp_path):
        rows = [make_row(rep=0, linf=1.0), make_row(rep=1, linf=3.0)]
        summary = emit_summary(rows, tmp_path / "summary.csv")
        linf = summary[summary.metric == "linf_error"].iloc[0]
        assert linf["mean"] == 2.0
        assert linf["se"] == pytest.approx(1.0)

    def test_recomputation(self, rng, tmp_path):
        values = rng.exponential(size=200)
        rows = [make_row(rep=i, estimator=("NAI", "ABC")[i % 2], linf=v) for i, v in enumerate(values)]
        path = tmp_path / "summary.csv"
        emit_summary(rows, path)
        written = pd.read_csv(path)
        nai = values[0::2]
        cell = written[(written.estimator == "NAI") & (written.metric == "linf_error")].iloc[0]
        assert cell["mean"] == pytest.approx(nai.mean(), rel=1e-12)
        assert cell["median"] == pytest.approx(np.median(nai), rel=1e-12)
        assert cell["se"] == pytest.approx(nai.std(ddof=1) / math.sqrt(100), rel=1e-12)

    def test_empty_and_unwritable(self, tmp_path):
        with pytest.raises(ArgumentError):
            emit_summary([], tmp_path / "summary.csv")
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OutputError):
            emit_summary([make_row()], blocker / "summary.csv")

    def test_linf_error_is_exported(self):
        assert linf_error([1.0, 2.0], [1.0, 0.5]) == 1.5


class TestRun:

    def test_task_emits_all_estimators(self, smoke):
        result = run_task(smoke, 0, 0)
        assert not result.failures
        assert [r.estimator for r in result.rows] == ["CEN", "NAI", "ABC"]
        for row in result.rows:
            assert row.linf_error >= 0 and row.l1_error >= row.linf_error
            assert row.f_l2_error >= 0
        assert math.isnan(result.rows[0].lambda0)
        assert result.rows[2].lambda0 == pytest.approx(math.sqrt(math.log(10) / 100))

    def test_theory_mode(self, smoke_config_path, tmp_path):
        cfg = config.load_experiment_config(smoke_config_path, tuning="theory", out=str(tmp_path))
        rows = run_task(cfg, 0, 0).rows
        assert rows[0].lambda2 == pytest.approx(math.log(10) / 100)

    def test_outputs_and_determinism(self, smoke_config_path, tmp_path):
        outputs = []
        for workers in (1, 2):
            cfg = config.load_experiment_config(
                smoke_config_path, replications=2, workers=workers, out=str(tmp_path / f"w{workers}"))
            report = run_experiment(cfg)
            assert report.failure_rate == 0.0
            assert len(report.rows) == 6
            outputs.append((tmp_path / f"w{workers}" / "results.csv").read_bytes())
        assert outputs[0] == outputs[1]

        out = tmp_path / "w1"
        for name in ("results.csv", "summary.csv", "timings.csv", "failures.csv"):
            assert (out / name).exists()
        header = outputs[0].split(b"\n", 1)[0].decode()
        assert header == ",".join(RESULT_COLUMNS)
        assert "wall_time_ms" not in header
        assert len(pd.read_csv(out / "failures.csv")) == 0

    def test_rows_carry_aggregate_errors(self, smoke, monkeypatch):
        captured = []
        original = pipeline.aggregate

        def spy(*args, **kwargs):
            captured.append(original(*args, **kwargs))
            return captured[-1]

        monkeypatch.setattr(pipeline, "aggregate", spy)
        rows = run_task(smoke, 0, 0).rows
        (agg,) = captured
        for row in rows[1:]:
            errs = agg.errors[row.estimator]
            assert (row.linf_error, row.l1_error, row.l2_error) == (errs["linf"], errs["l1"], errs["l2"])

    def test_single_machine_nai_equals_cen(self, smoke_config_path, tmp_path):
        cfg = config.load_experiment_config(smoke_config_path, tuning="theory", out=str(tmp_path))
        cen, nai, _ = run_task(cfg, 0, 0).rows
        assert (nai.lambda1, nai.lambda2) == (cen.lambda1, cen.lambda2)
        assert nai.linf_error == pytest.approx(cen.linf_error, abs=1e-7)
        assert nai.l1_error == pytest.approx(cen.l1_error, abs=1e-6)

    def test_machine_count_warning(self, smoke_config_path, caplog):
        cfg = config.load_experiment_config(smoke_config_path, m=10)
        with caplog.at_level(logging.WARNING):
            pipeline._machine_guidance(cfg)
        assert "exceeds sqrt(N/log p)" in caplog.text


class TestDiagnostics:

    def test_analytic_grid(self):
        frame = pipeline.diagnostics("sobolev3", 3.0, [100, 1000, 10000])
        assert list(frame["flag"]) == ["ok"] * 3
        assert np.all(np.diff(frame["nu"]) < 0)
        assert np.all(frame["gamma_n"] >= frame["nu"])

    def test_empirical_rows(self):
        frame = pipeline.diagnostics("sobolev3", 3.0, [50, 100], empirical=True)
        assert list(frame["sequence"]) == ["analytic", "analytic", "empirical", "empirical"]


class TestCli:

    @pytest.fixture(autouse=True)
    def restore_root_logger(self):
        # the group callback reconfigures the root logger onto the runner's stderr
        root = logging.getLogger()
        handlers, level = root.handlers[:], root.level
        yield
        root.handlers[:] = handlers
        root.setLevel(level)

    def test_run(self, smoke_config_path, tmp_path):
        out = tmp_path / "cli"
        result = CliRunner().invoke(cli, ["run", "--config", str(smoke_config_path), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert (out / "results.csv").exists()

    def test_run_bad_config(self, tmp_path):
        result = CliRunner().invoke(cli, ["run", "--config", str(tmp_path / "missing.toml")])
        assert result.exit_code == 2

    def test_run_excess_failures(self, smoke_config_path, tmp_path, monkeypatch):
        failed = Failure(10, 0, "CEN", "E_NUMERIC", "boom")
        monkeypatch.setattr(pipeline, "run_experiment",
                            lambda cfg: ExperimentReport([], [failed], 3, Path(cfg.out)))
        result = CliRunner().invoke(cli, ["run", "--config", str(smoke_config_path), "--out", str(tmp_path)])
        assert result.exit_code == 3

    def test_diag(self, tmp_path):
        out = tmp_path / "diag.csv"
        result = CliRunner().invoke(cli, ["diag", "--alpha", "1", "--n-grid", "100,1000", "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert len(pd.read_csv(out)) == 2

    def test_log_level_is_a_group_option(self, tmp_path):
        out = tmp_path / "diag.csv"
        args = ["--log-level", "debug", "diag", "--alpha", "1", "--n-grid", "100,1000", "--out", str(out)]
        result = CliRunner().invoke(cli, args)
        assert result.exit_code == 0, result.output
        assert logging.getLogger().level == logging.DEBUG
        bad = CliRunner().invoke(cli, ["--log-level", "chatty", "diag", "--out", str(out)])
        assert bad.exit_code == 2

    def test_dump(self, smoke_config_path, tmp_path):
        out = tmp_path / "data.csv"
        result = CliRunner().invoke(cli, ["dump", "--config", str(smoke_config_path), "--out", str(out)])
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out)
        assert frame.shape == (100, 14)


def _mean_linf(rows, value, estimator):
    return np.mean([r.linf_error for r in rows if r.value == value and r.estimator == estimator])


@pytest.mark.slow
def test_debiasing_beats_naive_average_across_dimensions(tmp_path):
    from scipy.stats import binomtest

    cfg = config.ExperimentConfig(scenario="sweep_p", values=(100, 200), N=2000, m=10,
                                  replications=50, seed=1, out=str(tmp_path), workers=4)
    rows = run_experiment(cfg).rows
    for p in cfg.values:
        assert _mean_linf(rows, p, "ABC") < _mean_linf(rows, p, "NAI")
        nai = {r.replication: r.linf_error for r in rows if r.value == p and r.estimator == "NAI"}
        abc = {r.replication: r.linf_error for r in rows if r.value == p and r.estimator == "ABC"}
        wins = sum(abc[k] < nai[k] for k in abc if k in nai)
        assert binomtest(wins, len(abc), alternative="greater").pvalue < 0.01


@pytest.mark.slow
def test_errors_do_not_improve_with_more_machines(tmp_path):
    from scipy.stats import spearmanr

    cfg = config.ExperimentConfig(scenario="sweep_m", values=(1, 5, 10, 20), N=2000, p=200,
                                  replications=50, seed=2, out=str(tmp_path), workers=4)
    rows = run_experiment(cfg).rows
    for estimator in ("NAI", "ABC"):
        means = [_mean_linf(rows, m, estimator) for m in cfg.values]
        assert spearmanr(cfg.values, means)[0] >= 0


@pytest.mark.slow
def test_abc_error_decreases_with_total_sample_size(tmp_path):
    cfg = config.ExperimentConfig(scenario="sweep_N", values=(2000, 4000, 6000), n=200, p=200,
                                  replications=50, seed=3, out=str(tmp_path), workers=4)
    rows = run_experiment(cfg).rows
    abc = [_mean_linf(rows, N, "ABC") for N in cfg.values]
    nai = [_mean_linf(rows, N, "NAI") for N in cfg.values]
    assert all(a > b for a, b in zip(abc, abc[1:]))
    assert all(n > a for n, a in zip(nai, abc))
