"""
Local double-penalised estimator (one machine)

    L(β, a) = (1/2n)‖Y − Xβ − Ka‖² + λ₁‖β‖₁ + (λ₂/2) a'Ka

For fixed β the optimal a is (nλ₂I + K)⁻¹(Y − Xβ); substituting it leaves the
profiled Lasso Q(β) = (1/2n)(Y − Xβ)'M(Y − Xβ) + λ₁‖β‖₁ with M = I − A(λ₂),
solved by coordinate descent on the weighted design X̃ = M^{1/2}X.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from errors import ArgumentError
from Estimation import lasso
from Kernels.kernel import kernel_section_sum, smoother_pair

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        if not self.lambda1 >= 0:
            raise ArgumentError(f"lambda1 must be >= 0 (got {self.lambda1})")
        if not self.lambda2 > 0:
            raise ArgumentError(f"lambda2 must be positive (got {self.lambda2})")


@dataclass(frozen=True, eq=False)
class LocalFit:
    beta_hat: np.ndarray
    a_hat: np.ndarray
    config: PenaltyConfig
    shard_id: int
    kkt_residual: float
    objective_value: float
    sweeps: int = 0
    smoother: Optional[object] = field(default=None, repr=False)

    @property
    def f_hat(self):
        """Fitted nonparametric values Kâ at the training points."""
        return self.smoother.gram @ self.a_hat


@dataclass(frozen=True, eq=False)
class WeightedSystem:
    """Covariance form of the profiled problem: G = X'MX/n, b = X'MY/n, yy = Y'MY/n."""
    G: np.ndarray
    b: np.ndarray
    yy: float


# ── Building blocks ───────────────────────────────────────────────

def _check_dims(shard, gram, beta=None):
    n, p = shard.X.shape
    if shard.Y.shape != (n,):
        raise ArgumentError(f"Y has shape {shard.Y.shape}, expected ({n},)")
    if np.shape(gram) != (n, n):
        raise ArgumentError(f"gram has shape {np.shape(gram)}, expected ({n}, {n})")
    if beta is not None and np.shape(beta) != (p,):
        raise ArgumentError(f"beta has shape {np.shape(beta)}, expected ({p},)")


def weighted_system(shard, smoother):
    n = shard.n
    MX = smoother.apply_residual(shard.X)
    MY = smoother.apply_residual(shard.Y)
    G = shard.X.T @ MX / n
    G = (G + G.T) / 2.0
    return WeightedSystem(G=G, b=shard.X.T @ MY / n, yy=float(shard.Y @ MY) / n)


def profiled_objective(shard, gram, beta, config, smoother=None):
    """Q(β) = (1/2n)(Y − Xβ)'(I − A)(Y − Xβ) + λ₁‖β‖₁."""
    _check_dims(shard, gram, beta)
    smoother = smoother or smoother_pair(gram, config.lambda2)
    r = shard.Y - shard.X @ np.asarray(beta, dtype=float)
    return float(r @ smoother.apply_residual(r)) / (2.0 * shard.n) + config.lambda1 * float(np.abs(beta).sum())


def joint_objective(shard, gram, beta, a, config):
    """L(β, a) with f = Ka."""
    _check_dims(shard, gram, beta)
    Ka = gram @ a
    r = shard.Y - shard.X @ beta - Ka
    return (
        float(r @ r) / (2.0 * shard.n)
        + config.lambda1 * float(np.abs(beta).sum())
        + 0.5 * config.lambda2 * float(a @ Ka)
    )


def recover_nonparametric(shard, gram, beta, lambda2, smoother=None):
    """â = (nλ₂I + K)⁻¹(Y − Xβ)."""
    _check_dims(shard, gram, beta)
    smoother = smoother or smoother_pair(gram, lambda2)
    return smoother.solve(shard.Y - shard.X @ np.asarray(beta, dtype=float))


# ── Fitting ───────────────────────────────────────────────────────

def _local_fit(shard, smoother, system, config, sol):
    beta = sol.beta
    a_hat = smoother.solve(shard.Y - shard.X @ beta)
    objective = lasso.smooth_objective(system.G, system.b, system.yy, beta) + config.lambda1 * float(np.abs(beta).sum())
    log.debug(
        f"[profiled_lasso] shard {shard.machine_id}: λ₁={config.lambda1:.3e} λ₂={config.lambda2:.3e} "
        f"nnz={int(np.count_nonzero(beta))} sweeps={sol.sweeps} kkt={sol.kkt_residual:.2e}"
    )
    return LocalFit(
        beta_hat=beta,
        a_hat=a_hat,
        config=config,
        shard_id=shard.machine_id,
        kkt_residual=sol.kkt_residual,
        objective_value=objective,
        sweeps=sol.sweeps,
        smoother=smoother,
    )


def fit_local(shard, gram, config, smoother=None, system=None, beta_init=None, **solver_kwargs):
    """β̂ by coordinate descent on Q, then â from the closed form."""
    _check_dims(shard, gram)
    if shard.n < 2:
        raise ArgumentError(f"fit_local needs at least 2 rows (got {shard.n})")
    smoother = smoother or smoother_pair(gram, config.lambda2)
    system = system or weighted_system(shard, smoother)
    sol = lasso.solve_lasso(system.G, system.b, config.lambda1, beta_init=beta_init, **solver_kwargs)
    return _local_fit(shard, smoother, system, config, sol)


def fit_path(shard, gram, lambda1_grid, lambda2, smoother=None, stop=None, **solver_kwargs):
    """
    Fits along `lambda1_grid` (descending, warm-started) at one λ₂.
    Returns one entry per grid point; entries after a point that failed to
    converge, or after the fit for which `stop(fit)` was true, are None.
    """
    _check_dims(shard, gram)
    smoother = smoother or smoother_pair(gram, lambda2)
    system = weighted_system(shard, smoother)
    fits = []

    def _record(sol):
        fits.append(_local_fit(shard, smoother, system, PenaltyConfig(sol.lam, lambda2), sol))
        return stop is not None and stop(fits[-1])

    lasso.lasso_path(system.G, system.b, lambda1_grid, stop=_record, **solver_kwargs)
    return fits + [None] * (len(lambda1_grid) - len(fits))


# ── Prediction ────────────────────────────────────────────────────

def predict(fit, shard, spec, x_new, t_new):
    """x'β̂ + Σ_i â_i k(T_i, t) for one point or a batch of points."""
    x_new = np.asarray(x_new, dtype=float)
    single = x_new.ndim == 1
    X = x_new.reshape(1, -1) if single else x_new
    if X.shape[1] != fit.beta_hat.shape[0]:
        raise ArgumentError(f"x_new has {X.shape[1]} covariates, fit has {fit.beta_hat.shape[0]}")
    T = spec.as_points(t_new)
    if T.shape[0] != X.shape[0]:
        raise ArgumentError("x_new and t_new describe different numbers of points")
    out = X @ fit.beta_hat + kernel_section_sum(spec, shard.T, fit.a_hat, T)
    return float(out[0]) if single else out


def predict_from_cross(fit, X_new, cross):
    """Same as predict() given the precomputed cross-Gram k(t_new, T_train)."""
    return X_new @ fit.beta_hat + cross @ fit.a_hat
