"""
plm-divide Central Configuration
Reads settings from .env and flat TOML experiment files into ExperimentConfig.
"""
import dataclasses
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from errors import ConfigError

log = logging.getLogger(__name__)

# ── Load .env ─────────────────────────────────────────────────────
ENV_PATH = Path(__file__).parent / ".env"

def _load_env():
    if not ENV_PATH.exists():
        # a missing .env is normal; the shell environment still applies
        return
    with open(ENV_PATH, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line:
                key, _, value = line.partition("=")
                os.environ.setdefault(key.strip(), value.strip())

_load_env()

# ── Paths ─────────────────────────────────────────────────────────
PROJECT_ROOT = Path(__file__).parent
CONFIG_DIR = PROJECT_ROOT / "configs"

# ── Environment ───────────────────────────────────────────────────
LOG_LEVEL = os.environ.get("PLM_DIVIDE_LOG_LEVEL", "INFO")


def env_threads():
    """PLM_DIVIDE_THREADS as an int, or None when unset."""
    raw = os.environ.get("PLM_DIVIDE_THREADS", "").strip()
    if not raw:
        return None
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"PLM_DIVIDE_THREADS must be an integer (got {raw!r})")
    if threads < 1:
        raise ConfigError(f"PLM_DIVIDE_THREADS must be >= 1 (got {threads})")
    return threads


# ── Experiment config ─────────────────────────────────────────────
SCENARIOS = ("sweep_p", "sweep_m", "sweep_N")
TUNING_MODES = ("cv", "theory")

PROFILES = {
    "paper": {"max_p": None, "max_replications": None},
    "desk": {"max_p": 200, "max_replications": 50},
}


class GridPoint(NamedTuple):
    value: int
    N: int
    p: int
    m: int


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    values: tuple
    N: Optional[int] = None
    p: Optional[int] = None
    m: int = 1
    n: Optional[int] = None
    replications: int = 200
    rho: float = 0.3
    noise_var: float = 4.0
    beta_star: Optional[tuple] = None
    seed: int = 0
    out: str = "results"
    workers: int = 1
    profile: str = "paper"
    kernel: str = "sobolev3"
    bandwidth: float = 1.0
    tuning: str = "cv"
    cv_folds: int = 5
    cv_patience: int = 3
    lambda1_count: int = 20
    lambda1_ratio: float = 1e-3
    lambda2_grid: Optional[tuple] = None
    lambda2_count: int = 10
    lambda2_span: float = 10.0
    lambda0_multipliers: tuple = (1.0,)
    tune_lambda0: bool = False
    lambda1_scale: float = 1.0
    redraw_partition: bool = True
    max_failure_rate: float = 0.05

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"Unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.profile not in PROFILES:
            raise ConfigError(f"Unknown profile {self.profile!r}; expected one of {tuple(PROFILES)}")
        if self.tuning not in TUNING_MODES:
            raise ConfigError(f"Unknown tuning mode {self.tuning!r}; expected one of {TUNING_MODES}")
        for name in ("values", "beta_star", "lambda2_grid", "lambda0_multipliers"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
        if not self.values:
            raise ConfigError("`values` must list at least one swept value")
        if self.replications < 1 or self.workers < 1 or self.cv_folds < 2:
            raise ConfigError("replications and workers must be >= 1, cv_folds >= 2")
        if self.cv_patience < 0:
            raise ConfigError(f"cv_patience must be >= 0, 0 scores the whole λ₁ grid (got {self.cv_patience})")
        if not 0 <= self.max_failure_rate <= 1:
            raise ConfigError(f"max_failure_rate must lie in [0, 1] (got {self.max_failure_rate})")
        # resolving the grid validates sizes at every point
        self.grid()

    # ── Grid ──────────────────────────────────────────────────────
    def _point(self, value):
        value = int(value)
        N, p, m = self.N, self.p, self.m
        if self.scenario == "sweep_p":
            p = value
        elif self.scenario == "sweep_m":
            m = value
        else:
            N = value
            if self.n is not None:
                if N % self.n:
                    raise ConfigError(f"N={N} is not a multiple of the fixed sub-sample size n={self.n}")
                m = N // self.n
        if N is None or p is None:
            raise ConfigError(f"scenario {self.scenario} needs fixed N and p")
        if m < 1 or N % m:
            raise ConfigError(f"N={N} is not divisible by m={m} at swept value {value}")
        if p < 5:
            raise ConfigError(f"p must be >= 5 (got {p} at swept value {value})")
        return GridPoint(value, N, p, m)

    def grid(self):
        return [self._point(v) for v in self.values]

    def swept_name(self):
        return self.scenario.split("_", 1)[1]


def apply_profile(config):
    """Clamp a config to its profile caps; swept p above the cap is dropped."""
    caps = PROFILES[config.profile]
    changes = {}
    max_p = caps["max_p"]
    if max_p is not None:
        if config.scenario == "sweep_p":
            kept = tuple(v for v in config.values if v <= max_p)
            if not kept:
                raise ConfigError(f"profile {config.profile!r} drops every swept p (cap {max_p})")
            if kept != config.values:
                log.info(f"[config] profile {config.profile}: dropping p values above {max_p}")
            changes["values"] = kept
        elif config.p is not None and config.p > max_p:
            changes["p"] = max_p
            if config.beta_star is not None:
                changes["beta_star"] = tuple(config.beta_star[:max_p])
    max_reps = caps["max_replications"]
    if max_reps is not None and config.replications > max_reps:
        changes["replications"] = max_reps
    return dataclasses.replace(config, **changes) if changes else config


FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def read_toml(path):
    path = Path(path)
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Invalid TOML in {path}: {e}")


def load_experiment_config(path=None, **overrides):
    """
    Flat TOML → ExperimentConfig. Non-None keyword overrides win over the file,
    PLM_DIVIDE_THREADS wins over both; the profile caps are applied last.
    """
    raw = read_toml(path) if path is not None else {}
    unknown = sorted(set(raw) - FIELDS)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    threads = env_threads()
    if threads is not None:
        raw["workers"] = threads
    if "scenario" not in raw or "values" not in raw:
        raise ConfigError("config needs `scenario` and `values`")
    try:
        config = ExperimentConfig(**raw)
    except TypeError as e:
        raise ConfigError(f"Bad config value: {e}")
    return apply_profile(config)
