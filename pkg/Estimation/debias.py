"""
Nodewise regression, one-step debiasing and aggregation across machines.

Per machine: X̃ = M^{1/2}X, Σ̃ = X̃'X̃/n, p nodewise Lassos give Θ̂ ≈ Σ̃⁻¹ and
β̌ = β̂ + (1/n)Θ̂X'M(Y − Xβ̂). The centre averages β̌ (ABC) and β̂ (NAI).
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed

from errors import ArgumentError, DegenerateColumnError, NumericError
from Estimation import lasso
from Estimation.profiled_lasso import fit_local
from Kernels.kernel import KernelSpec, gram_matrix

log = logging.getLogger(__name__)

TAU2_FLOOR = 1e-12
# nodewise problems are solved tighter so that Θ̂_jΣ̃e_j = 1 holds to ~1e-10
NODEWISE_CHANGE_TOL = 1e-12
IDENTITY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class NodewiseFit:
    theta: np.ndarray     # p × (p−1), row j regresses column j on the others
    tau2: np.ndarray
    C_hat: np.ndarray
    Theta: np.ndarray
    lambda0: float
    gap: float
    sigma_tilde: np.ndarray = field(repr=False, default=None)

    @property
    def gap_bound(self):
        return float(np.max(self.lambda0 / self.tau2))


@dataclass(frozen=True, eq=False)
class ShardEstimate:
    beta_hat: np.ndarray
    beta_check: np.ndarray
    gap: float


@dataclass(frozen=True, eq=False)
class AggregateResult:
    beta_bar: np.ndarray
    beta_naive: np.ndarray
    beta_cen: Optional[np.ndarray]
    per_shard: List[ShardEstimate]
    errors: dict = field(default_factory=dict)

    @property
    def m(self):
        return len(self.per_shard)


# ── Error metrics ─────────────────────────────────────────────────

def _check_pair(beta, beta_star):
    beta = np.asarray(beta, dtype=float)
    beta_star = np.asarray(beta_star, dtype=float)
    if beta.shape != beta_star.shape:
        raise ArgumentError(f"length mismatch: {beta.shape} vs {beta_star.shape}")
    return beta - beta_star


def linf_error(beta, beta_star):
    diff = _check_pair(beta, beta_star)
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def error_metrics(beta, beta_star):
    diff = _check_pair(beta, beta_star)
    return {
        "linf": linf_error(beta, beta_star),
        "l1": float(np.abs(diff).sum()),
        "l2": float(np.sqrt(diff @ diff)),
    }


# ── Weighted design / nodewise regression ─────────────────────────

def weighted_design(shard, smoother):
    """X̃ = (I − A)^{1/2} X."""
    if smoother.n != shard.n:
        raise ArgumentError(f"smoother is {smoother.n}×{smoother.n}, shard has {shard.n} rows")
    return smoother.sqrt_residual @ shard.X


def default_lambda0(p, n, multiplier=1.0):
    """λ⁰ = multiplier · sqrt(log p / n)."""
    return multiplier * math.sqrt(math.log(p) / n)


def _nodewise_row(sigma, j, lambda0):
    others = np.delete(np.arange(sigma.shape[0]), j)
    G = sigma[np.ix_(others, others)]
    b = sigma[others, j]
    return lasso.solve_lasso(G, b, lambda0, tol=NODEWISE_CHANGE_TOL).beta


def nodewise(design_tilde, lambda0, n_jobs=1):
    """Θ̂ = T̂⁻²Ĉ from p Lassos of X̃_j on X̃_{−j}, all at the common penalty λ⁰."""
    Xt = np.asarray(design_tilde, dtype=float)
    n, p = Xt.shape
    if n < 2 or p < 2:
        raise ArgumentError(f"nodewise needs n >= 2 and p >= 2 (got n={n}, p={p})")
    if not lambda0 > 0:
        raise ArgumentError(f"lambda0 must be positive (got {lambda0})")

    sigma = Xt.T @ Xt / n
    sigma = (sigma + sigma.T) / 2.0
    if n_jobs == 1:
        rows = [_nodewise_row(sigma, j, lambda0) for j in range(p)]
    else:
        rows = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_nodewise_row)(sigma, j, lambda0) for j in range(p)
        )

    theta = np.vstack(rows)
    tau2 = np.empty(p)
    C_hat = np.eye(p)
    for j in range(p):
        others = np.delete(np.arange(p), j)
        resid = Xt[:, j] - Xt[:, others] @ theta[j]
        tau2[j] = resid @ resid / n + lambda0 * np.abs(theta[j]).sum()
        if not tau2[j] >= TAU2_FLOOR:
            raise DegenerateColumnError(j, tau2[j])
        C_hat[j, others] = -theta[j]

    Theta = C_hat / tau2[:, None]
    gap = float(np.max(np.abs(Theta @ sigma - np.eye(p))))
    fit = NodewiseFit(theta=theta, tau2=tau2, C_hat=C_hat, Theta=Theta,
                      lambda0=float(lambda0), gap=gap, sigma_tilde=sigma)
    check_inverse_bound(fit)
    return fit


def check_inverse_bound(fit):
    """max_j ‖Θ̂_jΣ̃ − e_j‖_∞ ≤ max_j λ⁰/τ̂_j², and Θ̂_jΣ̃e_j = 1."""
    bound = fit.gap_bound
    if fit.gap > bound * (1.0 + 1e-8) + 1e-10:
        raise NumericError(f"approximate-inverse gap {fit.gap:.3e} exceeds bound {bound:.3e}")
    diag = np.einsum("ij,ji->i", fit.Theta, fit.sigma_tilde)
    worst = float(np.max(np.abs(diag - 1.0)))
    if worst > 1e-8:
        raise NumericError(f"Θ̂_jΣ̃e_j deviates from 1 by {worst:.3e}")


# ── Debiasing ─────────────────────────────────────────────────────

def debias_local(fit, shard, smoother, theta):
    """β̌ = β̂ + (1/n)Θ̂X'(I − A)(Y − Xβ̂); the M^{1/2} route is checked against it."""
    theta = np.asarray(theta, dtype=float)
    p = fit.beta_hat.shape[0]
    if theta.shape != (p, p) or shard.p != p or smoother.n != shard.n:
        raise ArgumentError(
            f"dimension mismatch: Θ̂ {theta.shape}, p={p}, shard {shard.X.shape}, smoother n={smoother.n}"
        )
    n = shard.n
    resid = shard.Y - shard.X @ fit.beta_hat
    score = shard.X.T @ smoother.apply_residual(resid) / n

    root = smoother.sqrt_residual
    Xt = root @ shard.X
    score_root = Xt.T @ (root @ resid) / n
    scale = 1e-10 * max(1.0, np.linalg.norm(shard.X) * np.linalg.norm(resid) / n)
    if np.max(np.abs(score - score_root)) > max(scale, IDENTITY_TOL):
        raise NumericError("X'M r and X̃'(ỹ − X̃β̂) disagree; M^{1/2} is inaccurate")
    return fit.beta_hat + theta @ score


# ── Aggregation ───────────────────────────────────────────────────

def aggregate(local, gaps=None, beta_cen=None, beta_star=None):
    """β̄ = mean of the debiased β̌^(l); NAI = mean of the β̂^(l)."""
    local = list(local)
    if not local:
        raise ArgumentError("aggregate needs at least one machine")
    p = local[0][0].beta_hat.shape[0]
    if any(f.beta_hat.shape != (p,) or np.shape(b) != (p,) for f, b in local):
        raise ArgumentError("all machines must share the same p")
    gaps = [float("nan")] * len(local) if gaps is None else list(gaps)

    hats = np.vstack([f.beta_hat for f, _ in local])
    checks = np.vstack([np.asarray(b, dtype=float) for _, b in local])
    result = AggregateResult(
        beta_bar=checks.mean(axis=0),
        beta_naive=hats.mean(axis=0),
        beta_cen=None if beta_cen is None else np.asarray(beta_cen, dtype=float),
        per_shard=[ShardEstimate(h, c, g) for h, c, g in zip(hats, checks, gaps)],
    )
    if beta_star is not None:
        result.errors["ABC"] = error_metrics(result.beta_bar, beta_star)
        result.errors["NAI"] = error_metrics(result.beta_naive, beta_star)
        if result.beta_cen is not None:
            result.errors["CEN"] = error_metrics(result.beta_cen, beta_star)
    return result


def centralized_fit(data, config, spec=None, gram=None, **solver_kwargs):
    """fit_local on the whole sample treated as a single machine of size N."""
    shard = data.as_shard()
    if gram is None:
        gram = gram_matrix(spec or KernelSpec(), shard.T)
    return fit_local(shard, gram, config, **solver_kwargs)


def centralized(data, config, spec=None, **solver_kwargs):
    """CEN: the centralised β̂."""
    return centralized_fit(data, config, spec, **solver_kwargs).beta_hat
