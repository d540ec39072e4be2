"""
Experiment pipeline → results.csv / summary.csv
For every swept value and replication: generate → partition → per-machine
tune/fit/debias → aggregate, plus the centralised fit on the whole sample.

Python 3.10+ / numpy / pandas / joblib
"""
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

import config as settings
from errors import ArgumentError, ConfigError, OutputError, PlmDivideError
from Estimation import tuning
from Estimation.debias import (aggregate, centralized_fit, debias_local, default_lambda0,
                               error_metrics, linf_error, nodewise, weighted_design)
from Estimation.profiled_lasso import fit_local
from Kernels import complexity
from Kernels.kernel import KernelSpec, gram_matrix, smoother_pair
from Simulation.datagen import SimDesign, partition, sample_dataset, stream, write_dataset_csv

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
ESTIMATORS = ("CEN", "NAI", "ABC")
METRICS = ("linf_error", "l1_error", "l2_error", "f_l2_error")
# stream keys under (seed, value_idx, replication)
DATA_KEY, PARTITION_KEY, CV_KEY, CEN_CV_KEY = 0, 1, 2, 3
EMPIRICAL_MAX_N = 2000

__all__ = ["configure_logging", "linf_error", "run_task", "run_experiment",
           "emit_summary", "diagnostics", "dump_dataset"]


def configure_logging(level=None):
    level = str(level or settings.LOG_LEVEL).upper()
    numeric = logging.getLevelName(level)
    if not isinstance(numeric, int):
        raise ConfigError(f"Unknown log level {level!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)


# ── Records ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class ResultRow:
    value: int
    replication: int
    estimator: str
    linf_error: float
    l1_error: float
    l2_error: float
    f_l2_error: float
    wall_time_ms: float
    lambda1: float
    lambda2: float
    lambda0: float
    mean_gap: float


RESULT_COLUMNS = [f.name for f in dataclasses.fields(ResultRow) if f.name != "wall_time_ms"]
TIMING_COLUMNS = ["value", "replication", "estimator", "wall_time_ms"]


@dataclass(frozen=True)
class Failure:
    value: int
    replication: int
    estimator: str
    error_code: str
    message: str


@dataclass
class TaskResult:
    rows: List[ResultRow] = field(default_factory=list)
    failures: List[Failure] = field(default_factory=list)


@dataclass
class ExperimentReport:
    rows: List[ResultRow]
    failures: List[Failure]
    expected_rows: int
    out_dir: Path

    @property
    def failure_rate(self):
        return len(self.failures) / self.expected_rows if self.expected_rows else 0.0


# ── Building blocks ───────────────────────────────────────────────

def _beta_for(cfg, p):
    if cfg.beta_star is None:
        return None
    beta = np.zeros(p)
    given = np.asarray(cfg.beta_star, dtype=float)[:p]
    beta[: given.size] = given
    return beta


def _dataset_for(cfg, value_idx, rep):
    point = cfg.grid()[value_idx]
    design = SimDesign(N=point.N, p=point.p, m=point.m, rho=cfg.rho, noise_var=cfg.noise_var,
                       beta_star=_beta_for(cfg, point.p), seed=cfg.seed)
    data = sample_dataset(design, rng=stream(cfg.seed, value_idx, rep, DATA_KEY))
    return point, data


def _plan_seed(cfg, value_idx, rep, key):
    return int(stream(cfg.seed, value_idx, rep, key).integers(2**31 - 1))


def _cv_plan(cfg, point, seed):
    lambda2_grid = cfg.lambda2_grid or tuning.default_lambda2_grid(
        point.p, point.N, cfg.lambda2_count, cfg.lambda2_span)
    return tuning.CvPlan(
        lambda2_grid=lambda2_grid,
        k=cfg.cv_folds,
        patience=cfg.cv_patience or None,
        lambda1_count=cfg.lambda1_count,
        lambda1_ratio=cfg.lambda1_ratio,
        lambda0_multipliers=cfg.lambda0_multipliers,
        tune_lambda0=cfg.tune_lambda0,
        seed=seed,
    )


def _penalty(cfg, shard, spec, gram, plan, N):
    if cfg.tuning == "theory":
        return tuning.theory_penalty(shard.p, shard.n, N, cfg.lambda1_scale)
    return tuning.cv_select(shard, spec, plan, gram=gram)


def _f_error(f_hat, f_true):
    diff = np.asarray(f_hat) - np.asarray(f_true)
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass(frozen=True, eq=False)
class MachineFit:
    fit: object
    beta_check: np.ndarray
    lambda0: float
    gap: float
    f_error: float
    fit_ms: float
    debias_ms: float


def fit_machine(cfg, shard, data, spec, plan, N):
    """Tune, fit and debias one machine."""
    started = time.perf_counter()
    gram = gram_matrix(spec, shard.T)
    penalty = _penalty(cfg, shard, spec, gram, plan, N)
    smoother = smoother_pair(gram, penalty.lambda2)
    fit = fit_local(shard, gram, penalty, smoother=smoother)
    fitted = time.perf_counter()

    Xt = weighted_design(shard, smoother)
    if cfg.tuning == "theory":
        lambda0 = default_lambda0(shard.p, shard.n)
    else:
        lambda0 = tuning.cv_select_lambda0(Xt, plan, shard.machine_id)
    node = nodewise(Xt, lambda0)
    beta_check = debias_local(fit, shard, smoother, node.Theta)
    done = time.perf_counter()
    return MachineFit(
        fit=fit,
        beta_check=beta_check,
        lambda0=lambda0,
        gap=node.gap,
        f_error=_f_error(fit.f_hat, data.f_true[shard.indices]),
        fit_ms=1000.0 * (fitted - started),
        debias_ms=1000.0 * (done - fitted),
    )


def _row(point, rep, estimator, errs, f_error, ms, lambda1, lambda2, lambda0, gap):
    return ResultRow(point.value, rep, estimator, errs["linf"], errs["l1"], errs["l2"],
                     f_error, ms, lambda1, lambda2, lambda0, gap)


def _failure(point, rep, estimator, err):
    log.error(f"[pipeline] value={point.value} rep={rep} {estimator} failed [{err.code}]: {err}")
    return Failure(point.value, rep, estimator, err.code, str(err))


# ── One task ──────────────────────────────────────────────────────

def run_task(cfg, value_idx, rep):
    """All three estimators for one (swept value, replication)."""
    point, data = _dataset_for(cfg, value_idx, rep)
    beta_star = data.design.beta_star
    spec = KernelSpec(kind=cfg.kernel, bandwidth=cfg.bandwidth)
    result = TaskResult()

    # CEN
    try:
        started = time.perf_counter()
        shard = data.as_shard()
        plan = _cv_plan(cfg, point, _plan_seed(cfg, value_idx, rep, CEN_CV_KEY))
        gram = gram_matrix(spec, shard.T)
        penalty = _penalty(cfg, shard, spec, gram, plan, point.N)
        fit = centralized_fit(data, penalty, spec, gram=gram)
        ms = 1000.0 * (time.perf_counter() - started)
        result.rows.append(_row(point, rep, "CEN", error_metrics(fit.beta_hat, beta_star),
                                _f_error(fit.f_hat, data.f_true), ms,
                                penalty.lambda1, penalty.lambda2, math.nan, math.nan))
    except PlmDivideError as e:
        result.failures.append(_failure(point, rep, "CEN", e))

    # NAI / ABC
    partition_rng = (stream(cfg.seed, value_idx, rep, PARTITION_KEY) if cfg.redraw_partition
                     else stream(cfg.seed, value_idx, PARTITION_KEY))
    try:
        shards = partition(data, point.m, partition_rng)
        plan = _cv_plan(cfg, point, _plan_seed(cfg, value_idx, rep, CV_KEY))
        machines = [fit_machine(cfg, s, data, spec, plan, point.N) for s in shards]
    except PlmDivideError as e:
        result.failures.append(_failure(point, rep, "NAI", e))
        result.failures.append(_failure(point, rep, "ABC", e))
        return result

    agg = aggregate([(mf.fit, mf.beta_check) for mf in machines],
                    gaps=[mf.gap for mf in machines], beta_star=beta_star)
    lambda1 = float(np.mean([mf.fit.config.lambda1 for mf in machines]))
    lambda2 = float(np.mean([mf.fit.config.lambda2 for mf in machines]))
    lambda0 = float(np.mean([mf.lambda0 for mf in machines]))
    gap = float(np.mean([mf.gap for mf in machines]))
    f_error = float(np.mean([mf.f_error for mf in machines]))
    fit_ms = float(sum(mf.fit_ms for mf in machines))
    debias_ms = float(sum(mf.debias_ms for mf in machines))
    result.rows.append(_row(point, rep, "NAI", agg.errors["NAI"], f_error, fit_ms,
                            lambda1, lambda2, lambda0, gap))
    result.rows.append(_row(point, rep, "ABC", agg.errors["ABC"], f_error, fit_ms + debias_ms,
                            lambda1, lambda2, lambda0, gap))
    return result


# ── Output ────────────────────────────────────────────────────────

def _write_csv(frame, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", na_rep="nan")
    except OSError as e:
        raise OutputError(path, e)
    return path


def _rows_frame(rows, columns):
    records = [dataclasses.asdict(r) for r in rows]
    return pd.DataFrame.from_records(records, columns=columns)


def emit_summary(rows, path):
    """Long format: value, estimator, metric, mean, se, median, count."""
    if not rows:
        raise ArgumentError("emit_summary needs at least one row")
    frame = _rows_frame(rows, [f.name for f in dataclasses.fields(ResultRow)])
    records = []
    for (value, estimator), cell in frame.groupby(["value", "estimator"], sort=False):
        for metric in METRICS:
            x = cell[metric].dropna()
            count = int(x.size)
            se = float(x.std(ddof=1) / math.sqrt(count)) if count > 1 else 0.0
            records.append({
                "value": value,
                "estimator": estimator,
                "metric": metric,
                "mean": float(x.mean()) if count else math.nan,
                "se": se,
                "median": float(x.median()) if count else math.nan,
                "count": count,
            })
    summary = pd.DataFrame.from_records(records)
    _write_csv(summary, path)
    return summary


def _machine_guidance(cfg):
    for point in cfg.grid():
        limit = math.sqrt(point.N / math.log(point.p))
        if point.m > limit:
            log.warning(
                f"[pipeline] m={point.m} exceeds sqrt(N/log p)={limit:.1f} at value {point.value}; "
                f"averaged estimators are not expected to track CEN here"
            )


# ── Experiment ────────────────────────────────────────────────────

def run_experiment(cfg):
    """
    Runs every (value, replication) task on `cfg.workers` threads and writes
    results.csv, summary.csv, timings.csv and failures.csv under cfg.out.
    """
    log.info(f"--- Starting experiment {cfg.scenario}: {cfg.swept_name()} over {list(cfg.values)} ({cfg.profile}) ---")
    start_time = datetime.now()
    _machine_guidance(cfg)
    out_dir = Path(cfg.out)
    tasks = [(vi, rep) for vi in range(len(cfg.values)) for rep in range(cfg.replications)]

    # one BLAS thread everywhere so results do not depend on the worker count
    with threadpool_limits(limits=1):
        if cfg.workers == 1:
            results = [run_task(cfg, vi, rep) for vi, rep in tasks]
        else:
            results = Parallel(n_jobs=cfg.workers, prefer="threads")(
                delayed(run_task)(cfg, vi, rep) for vi, rep in tasks
            )

    rows = [row for r in results for row in r.rows]
    failures = [f for r in results for f in r.failures]
    report = ExperimentReport(rows, failures, len(tasks) * len(ESTIMATORS), out_dir)

    _write_csv(_rows_frame(rows, RESULT_COLUMNS), out_dir / "results.csv")
    _write_csv(_rows_frame(rows, TIMING_COLUMNS), out_dir / "timings.csv")
    _write_csv(_rows_frame(failures, [f.name for f in dataclasses.fields(Failure)]), out_dir / "failures.csv")
    if rows:
        emit_summary(rows, out_dir / "summary.csv")
    else:
        log.error("[pipeline] every row failed; no summary written")

    log.info(
        f"[pipeline] {len(rows)} rows, {len(failures)} failed "
        f"({100.0 * report.failure_rate:.1f}%) → {out_dir}"
    )
    log.info(f"--- Experiment finished in {datetime.now() - start_time} ---")
    return report


# ── Diagnostics / dump ────────────────────────────────────────────

def _diag_record(sequence, eigs, n, p):
    radius = complexity.critical_radius(eigs, n)
    return {
        "sequence": sequence,
        "n": n,
        "nu": radius.nu,
        "flag": radius.flag,
        "q_n": complexity.q_n(eigs, n, radius.nu) if radius.nu > 0 else 0.0,
        "gamma_n": complexity.gamma_n(radius.nu, n, p),
    }


def diagnostics(kernel, alpha, n_grid, p=1000, empirical=False, seed=0):
    """Q_n(ν_n), ν_n and γ_n over `n_grid`; log-log slope against both exponents."""
    n_grid = sorted(int(n) for n in n_grid)
    analytic = complexity.EigenSequence.power_law(alpha)
    records = [_diag_record("analytic", analytic, n, p) for n in n_grid]

    ok = [r for r in records if r["flag"] == "ok"]
    if len(ok) >= 2:
        slope = complexity.loglog_slope([r["n"] for r in ok], [r["nu"] for r in ok])
        log.info(
            f"[diag] log-log slope of ν_n: {slope:.4f} (derived {complexity.derived_exponent(alpha):.4f}, "
            f"stated {complexity.stated_exponent(alpha):.4f})"
        )

    if empirical:
        spec = KernelSpec(kind=kernel)
        for n in n_grid:
            if n > EMPIRICAL_MAX_N:
                log.warning(f"[diag] skipping empirical spectrum at n={n} (> {EMPIRICAL_MAX_N})")
                continue
            design = SimDesign(N=n, p=5, seed=seed)
            data = sample_dataset(design, rng=stream(seed, n))
            eigs = complexity.EigenSequence.from_gram(gram_matrix(spec, data.T))
            records.append(_diag_record("empirical", eigs, n, p))
    return pd.DataFrame.from_records(records)


def write_diagnostics(frame, path):
    return _write_csv(frame, path)


def dump_dataset(cfg, value_idx, rep, path):
    if not 0 <= value_idx < len(cfg.values):
        raise ConfigError(f"value index {value_idx} is outside 0..{len(cfg.values) - 1}")
    _, data = _dataset_for(cfg, value_idx, rep)
    write_dataset_csv(data, path)
    return data


if __name__ == "__main__":
    configure_logging()
    run_experiment(settings.load_experiment_config(settings.CONFIG_DIR / "smoke.toml"))
