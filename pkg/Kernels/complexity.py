"""
RKHS complexity diagnostics
Q_n(r), the critical radius ν_n (smallest r with 40r² ≥ Q_n(r)) and
γ_n = max{ν_n, sqrt(log p / n)} for explicit or power-law eigenvalue sequences.

Python 3.10+.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.special import zeta

from errors import ArgumentError

log = logging.getLogger(__name__)

CRITICAL_CONSTANT = 40.0
BISECTION_TOL = 1e-10
TRUNCATION_RATIO = 1e-6
MAX_EXPLICIT_TERMS = 1_000_000
# keeps r^(-1/alpha) finite for every alpha > 1/2
BRACKET_LOW = 1e-15


@dataclass(frozen=True, eq=False)
class EigenSequence:
    """
    Nonincreasing kernel eigenvalues μ₁ ≥ μ₂ ≥ … ≥ 0.
    Either an explicit array `mu` or the analytic decay μ_ℓ = ℓ^{-2α}.
    """
    mu: Optional[np.ndarray] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if (self.mu is None) == (self.alpha is None):
            raise ArgumentError("EigenSequence needs exactly one of `mu` or `alpha`")
        if self.alpha is not None and not self.alpha > 0.5:
            raise ArgumentError(f"decay exponent alpha must exceed 1/2 (got {self.alpha})")
        if self.mu is not None:
            mu = np.asarray(self.mu, dtype=float)
            if mu.ndim != 1 or np.any(mu < 0) or np.any(np.diff(mu) > 0):
                raise ArgumentError("explicit eigenvalues must be a nonincreasing, nonnegative vector")
            object.__setattr__(self, "mu", mu)

    @classmethod
    def power_law(cls, alpha):
        return cls(alpha=float(alpha))

    @classmethod
    def from_gram(cls, gram):
        """Empirical sequence: eigenvalues of K/n, clamped at 0."""
        K = np.asarray(gram, dtype=float)
        w = scipy.linalg.eigvalsh(K / K.shape[0], check_finite=False)
        return cls(mu=np.sort(np.clip(w, 0.0, None))[::-1])

    @property
    def is_analytic(self):
        return self.alpha is not None

    @property
    def is_trivial(self):
        return not self.is_analytic and not np.any(self.mu > 0)


# ── Q_n(r) ────────────────────────────────────────────────────────

def _power_law_head(alpha, r):
    """Number of indices ℓ ≥ 1 with ℓ^{-2α} ≥ r²."""
    if r >= 1.0:
        return 1 if r == 1.0 else 0
    count = math.floor(r ** (-1.0 / alpha))
    if count > 2**52:
        return float(count)
    while (count + 1) ** (-2.0 * alpha) >= r * r:
        count += 1
    while count > 0 and count ** (-2.0 * alpha) < r * r:
        count -= 1
    return count


def _power_law_sum(alpha, r):
    """Σ_ℓ min{r², ℓ^{-2α}}: analytic head, explicit block, Hurwitz-zeta tail."""
    head = _power_law_head(alpha, r)
    total = head * r * r
    start = head + 1
    # explicit terms until μ_ℓ drops below r²·1e-6
    stop = (r * r * TRUNCATION_RATIO) ** (-1.0 / (2.0 * alpha))
    n_explicit = int(min(max(stop - start + 1, 0), MAX_EXPLICIT_TERMS)) if start < 2**52 else 0
    if n_explicit > 0:
        idx = np.arange(start, start + n_explicit, dtype=float)
        total += float(np.sum(idx ** (-2.0 * alpha)))
    total += float(zeta(2.0 * alpha, start + n_explicit))
    return total


def q_n(eigs, n, r):
    """Q_n(r) = n^{-1/2} [Σ_ℓ min{r², μ_ℓ}]^{1/2}."""
    if not r > 0:
        raise ArgumentError(f"r must be positive (got {r})")
    if n < 1:
        raise ArgumentError(f"n must be a positive integer (got {n})")
    if eigs.is_analytic:
        total = _power_law_sum(eigs.alpha, r)
    else:
        total = float(np.sum(np.minimum(r * r, eigs.mu)))
    return math.sqrt(total / n)


# ── Critical radius ───────────────────────────────────────────────

class CriticalRadius(NamedTuple):
    nu: float
    flag: str  # ok | trivial | no_crossing | below_resolution


def critical_radius(eigs, n, tol=BISECTION_TOL):
    """Smallest ν ∈ (0,1] with 40ν² ≥ Q_n(ν), by bisection."""
    if n < 1:
        raise ArgumentError(f"n must be a positive integer (got {n})")
    if eigs.is_trivial:
        log.warning("[complexity] all eigenvalues are zero; Q_n ≡ 0, reporting ν = 0")
        return CriticalRadius(0.0, "trivial")

    def gap(r):
        return CRITICAL_CONSTANT * r * r - q_n(eigs, n, r)

    if gap(1.0) < 0:
        log.warning(f"[complexity] no crossing of 40r² = Q_n(r) in (0,1] for n={n}; returning 1")
        return CriticalRadius(1.0, "no_crossing")

    lo = BRACKET_LOW
    if gap(lo) >= 0:
        return CriticalRadius(lo, "below_resolution")
    nu = scipy.optimize.bisect(gap, lo, 1.0, xtol=tol, maxiter=2000)
    if gap(nu) < 0:
        nu = min(nu + tol, 1.0)
    return CriticalRadius(float(nu), "ok")


def gamma_n(nu, n, p):
    """γ_n = max{ν_n, sqrt(log p / n)}."""
    if p < 2:
        raise ArgumentError(f"p must be >= 2 (got {p})")
    if n < 1:
        raise ArgumentError(f"n must be a positive integer (got {n})")
    return max(float(nu), math.sqrt(math.log(p) / n))


# ── Scaling diagnostics ───────────────────────────────────────────

def derived_exponent(alpha):
    """log ν_n / log n computed from the Q_n definition: −α/(2α+1)."""
    return -alpha / (2.0 * alpha + 1.0)


def stated_exponent(alpha):
    """The exponent −2α/(2α+1), which matches ν_n² rather than ν_n."""
    return -2.0 * alpha / (2.0 * alpha + 1.0)


def loglog_slope(ns, values):
    """Least-squares slope of log(values) against log(ns)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)
