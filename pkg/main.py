"""
plm-divide command line
    python main.py run  --config configs/fig1_dimension.toml --profile desk
    python main.py diag --alpha 3 --n-grid 100,1000,10000,100000
    python main.py dump --config configs/smoke.toml --out data.csv
"""
import logging
import sys
from pathlib import Path

import click

# Add project root to path
PROJECT_ROOT = Path(__file__).parent
sys.path.insert(0, str(PROJECT_ROOT))

import config
import pipeline
from errors import ConfigError, PlmDivideError

log = logging.getLogger("plm_divide")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_FAILURES = 3


def _int_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected a comma-separated list of integers")


@click.group()
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING… (env PLM_DIVIDE_LOG_LEVEL)")
def cli(log_level):
    """Divide-and-conquer debiased estimation for sparse partially linear models."""
    try:
        pipeline.configure_logging(log_level)
    except ConfigError as e:
        click.echo(f"[main] {e}", err=True)
        sys.exit(EXIT_CONFIG)


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--scenario", type=click.Choice(config.SCENARIOS), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--profile", type=click.Choice(tuple(config.PROFILES)), default=None)
def run(config_path, scenario, seed, workers, out, profile):
    """Run a sweep and write results/summary/timings/failures CSVs."""
    try:
        cfg = config.load_experiment_config(
            config_path, scenario=scenario, seed=seed, workers=workers, out=out, profile=profile
        )
    except ConfigError as e:
        log.error(f"[main] {e}")
        sys.exit(EXIT_CONFIG)

    try:
        report = pipeline.run_experiment(cfg)
    except PlmDivideError as e:
        log.error(f"[main] run aborted [{e.code}]: {e}")
        sys.exit(EXIT_CONFIG if isinstance(e, ConfigError) else EXIT_ERROR)

    if report.failure_rate > cfg.max_failure_rate:
        log.error(
            f"[main] {100.0 * report.failure_rate:.1f}% of rows failed "
            f"(limit {100.0 * cfg.max_failure_rate:.1f}%)"
        )
        sys.exit(EXIT_FAILURES)
    sys.exit(EXIT_OK)


@cli.command()
@click.option("--kernel", type=click.Choice(("sobolev3", "gaussian", "laplace")), default="sobolev3")
@click.option("--alpha", type=float, default=3.0, help="power-law decay μ_ℓ = ℓ^(-2α)")
@click.option("--n-grid", callback=_int_list, default="100,1000,10000,100000")
@click.option("--p", "p", type=int, default=1000)
@click.option("--empirical", is_flag=True, help="also use the eigenvalues of K/n on a simulated sample")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default="diagnostics.csv")
def diag(kernel, alpha, n_grid, p, empirical, seed, out):
    """Q_n / ν_n / γ_n diagnostics CSV."""
    try:
        frame = pipeline.diagnostics(kernel, alpha, n_grid, p=p, empirical=empirical, seed=seed)
        pipeline.write_diagnostics(frame, out)
    except PlmDivideError as e:
        log.error(f"[main] diag failed [{e.code}]: {e}")
        sys.exit(EXIT_CONFIG if isinstance(e, (ConfigError, ValueError)) else EXIT_ERROR)
    log.info(f"[main] wrote {len(frame)} diagnostic rows → {out}")


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--value-index", type=int, default=0)
@click.option("--replication", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def dump(config_path, value_index, replication, out):
    """Write one generated dataset as CSV."""
    try:
        cfg = config.load_experiment_config(config_path)
        pipeline.dump_dataset(cfg, value_index, replication, out)
    except ConfigError as e:
        log.error(f"[main] {e}")
        sys.exit(EXIT_CONFIG)
    except PlmDivideError as e:
        log.error(f"[main] dump failed [{e.code}]: {e}")
        sys.exit(EXIT_ERROR)


if __name__ == "__main__":
    cli()
