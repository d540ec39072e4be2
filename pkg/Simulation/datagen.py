"""
Synthetic partially linear data → Dataset / Shard
Y_i = X_i'β* + f*(T_i) + ε_i with AR(1)-correlated Gaussian covariates,
T_i = Φ(Z_i1), and a seeded random split of the N rows over m machines.

Python 3.10+. All randomness comes from counter-based Philox streams.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from scipy.special import ndtr

from errors import ArgumentError, OutputError

log = logging.getLogger(__name__)

DEFAULT_BETA = (1.0, 2.0, -1.0, 0.5, -2.0)
CDF_CLAMP = 1e-15


# ── Random streams ────────────────────────────────────────────────

def stream(seed, *key):
    """Independent Philox generator for the logical index `key` under `seed`."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def _as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return stream(seed)


# ── Model components ──────────────────────────────────────────────

def f_star(t):
    """f*(t) = 5 sin(2πt) / (2 − sin(2πt)); range [−5/3, 5]."""
    s = np.sin(2.0 * np.pi * np.asarray(t, dtype=float))
    out = 5.0 * s / (2.0 - s)
    return float(out) if out.ndim == 0 else out


def normal_cdf(z):
    """Standard normal CDF Φ(z) via scipy's ndtr (erfc based)."""
    out = ndtr(np.asarray(z, dtype=float))
    return float(out) if out.ndim == 0 else out


def default_beta(p):
    if p < len(DEFAULT_BETA):
        raise ArgumentError(f"p must be >= {len(DEFAULT_BETA)} to host the default support (got {p})")
    beta = np.zeros(p)
    beta[: len(DEFAULT_BETA)] = DEFAULT_BETA
    return beta


# ── Design / data types ───────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SimDesign:
    N: int
    p: int
    m: int = 1
    rho: float = 0.3
    noise_var: float = 4.0
    beta_star: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.N < self.m:
            raise ArgumentError(f"need N >= m >= 1 (got N={self.N}, m={self.m})")
        if self.N % self.m:
            raise ArgumentError(f"N={self.N} is not divisible by m={self.m}")
        if self.p < len(DEFAULT_BETA):
            raise ArgumentError(f"p must be >= {len(DEFAULT_BETA)} (got {self.p})")
        if not -1.0 < self.rho < 1.0:
            raise ArgumentError(f"rho must lie in (-1, 1) (got {self.rho})")
        if not self.noise_var > 0:
            raise ArgumentError(f"noise_var must be positive (got {self.noise_var})")
        beta = default_beta(self.p) if self.beta_star is None else np.asarray(self.beta_star, dtype=float)
        if beta.shape != (self.p,):
            raise ArgumentError(f"beta_star must have length p={self.p} (got shape {beta.shape})")
        object.__setattr__(self, "beta_star", beta)

    @property
    def n(self):
        return self.N // self.m


@dataclass(frozen=True, eq=False)
class Shard:
    indices: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    T: np.ndarray
    machine_id: int = 0

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, rows):
        """Rows `rows` (positions within this shard) as a new shard."""
        rows = np.asarray(rows)
        return Shard(self.indices[rows], self.Y[rows], self.X[rows], self.T[rows], self.machine_id)


@dataclass(frozen=True, eq=False)
class Dataset:
    Y: np.ndarray
    X: np.ndarray
    T: np.ndarray
    f_true: np.ndarray
    eps: np.ndarray
    design: SimDesign = field(repr=False)

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def as_shard(self):
        return Shard(np.arange(self.N), self.Y, self.X, self.T, machine_id=0)


# ── Generation ────────────────────────────────────────────────────

def sample_dataset(design, rng=None):
    """
    Draw one dataset. Z_i ∈ R^{p+1} follows the AR(1) recursion
    Z_1 ~ N(0,1), Z_j = ρZ_{j−1} + sqrt(1−ρ²)η_j, so Cov(Z_j, Z_k) = ρ^{|j−k|};
    T = Φ(Z_1) and X = (Z_2, …, Z_{p+1}).
    """
    if not isinstance(design, SimDesign):
        raise ArgumentError("sample_dataset expects a SimDesign")
    rng = _as_generator(design.seed if rng is None else rng)
    N, p, rho = design.N, design.p, design.rho

    eta = rng.standard_normal((N, p + 1))
    Z = np.empty_like(eta)
    Z[:, 0] = eta[:, 0]
    innovation = np.sqrt(1.0 - rho * rho)
    for j in range(1, p + 1):
        Z[:, j] = rho * Z[:, j - 1] + innovation * eta[:, j]

    T = np.clip(ndtr(Z[:, 0]), CDF_CLAMP, 1.0 - CDF_CLAMP)
    X = np.ascontiguousarray(Z[:, 1:])
    eps = np.sqrt(design.noise_var) * rng.standard_normal(N)
    f_true = f_star(T)
    Y = X @ design.beta_star + f_true + eps
    return Dataset(Y=Y, X=X, T=T, f_true=f_true, eps=eps, design=design)


def partition(data, m, seed):
    """Uniform random permutation of [N] cut into m consecutive blocks of n = N/m rows."""
    N = data.N
    if m < 1 or N % m:
        raise ArgumentError(f"N={N} is not divisible by m={m}")
    perm = _as_generator(seed).permutation(N)
    n = N // m
    shards = []
    for l in range(m):
        idx = perm[l * n:(l + 1) * n]
        shards.append(Shard(idx, data.Y[idx], data.X[idx], data.T[idx], machine_id=l))
    return shards


# ── CSV dump ──────────────────────────────────────────────────────

def write_dataset_csv(data, path):
    """Header `i,y,t,x1..xp,eps`, LF endings, 17 significant digits."""
    columns = {"i": np.arange(data.N), "y": data.Y, "t": data.T}
    columns.update({f"x{j + 1}": data.X[:, j] for j in range(data.p)})
    columns["eps"] = data.eps
    frame = pd.DataFrame(columns)
    try:
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise OutputError(path, e)
    log.info(f"[datagen] wrote {data.N} rows × {data.p} covariates → {path}")
