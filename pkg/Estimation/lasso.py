"""
Cyclic coordinate descent for ℓ₁-penalised least squares in covariance form.

    minimise  ½ β'Gβ − b'β + λ‖β‖₁      (G = X'X/n, b = X'y/n)

which is (1/2n)‖y − Xβ‖² + λ‖β‖₁ up to the constant y'y/2n. Both the
profiled estimator and the nodewise regressions run on this solver.
"""
import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from errors import ArgumentError, ConvergenceError, NumericError

log = logging.getLogger(__name__)

MAX_SWEEPS = 100_000
CHANGE_TOL = 1e-8
KKT_TOL = 1e-6
MIN_CHANGE_TOL = 1e-15


@njit(cache=True, nogil=True)
def _penalised_value(b, c, beta, lam):
    # ½β'Gβ − b'β = −½(b'β + c'β) since c = b − Gβ
    value = 0.0
    for j in range(beta.shape[0]):
        value += -0.5 * (b[j] + c[j]) * beta[j] + lam * abs(beta[j])
    return value


@njit(cache=True, nogil=True)
def _coordinate_descent(G, b, lam, beta, c, max_sweeps, tol):
    """
    Sweeps in fixed index order; after a full sweep only the nonzero
    coordinates are cycled until they settle, then a full sweep re-checks.
    beta and c = b − Gβ are updated in place.
    Returns (sweeps, converged, monotone).
    """
    p = beta.shape[0]
    active = np.ones(p, dtype=np.bool_)
    full_sweep = True
    monotone = True
    previous = _penalised_value(b, c, beta, lam)
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        max_change = 0.0
        for j in range(p):
            if not full_sweep and not active[j]:
                continue
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            z = c[j] + gjj * old
            if z > lam:
                new = (z - lam) / gjj
            elif z < -lam:
                new = (z + lam) / gjj
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                beta[j] = new
                for k in range(p):
                    c[k] -= G[k, j] * delta
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if full_sweep:
            for j in range(p):
                active[j] = beta[j] != 0.0

        current = _penalised_value(b, c, beta, lam)
        if current > previous + 1e-10 * (1.0 + abs(previous)):
            monotone = False
        previous = current

        if max_change < tol:
            if full_sweep:
                return sweeps, True, monotone
            full_sweep = True
        else:
            full_sweep = False
    return sweeps, False, monotone


# ── Public API ────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class LassoSolution:
    beta: np.ndarray
    kkt_residual: float
    sweeps: int
    lam: float


def kkt_residual(G, b, beta, lam):
    """Largest violation of the subgradient conditions of the ℓ₁ problem."""
    c = b - G @ beta
    zero = beta == 0
    viol = np.where(zero, np.maximum(np.abs(c) - lam, 0.0), np.abs(c - lam * np.sign(beta)))
    return float(viol.max()) if viol.size else 0.0


def null_threshold(b):
    """Smallest λ at which β = 0 solves the problem: max_j |b_j|."""
    return float(np.max(np.abs(b))) if np.size(b) else 0.0


def smooth_objective(G, b, yy, beta):
    """(1/2n)‖y − Xβ‖² expressed through G, b and yy = y'y/n."""
    return float(0.5 * yy - b @ beta + 0.5 * beta @ G @ beta)


def solve_lasso(G, b, lam, beta_init=None, max_sweeps=MAX_SWEEPS, tol=CHANGE_TOL, kkt_tol=KKT_TOL):
    G = np.ascontiguousarray(G, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    p = b.shape[0]
    if G.shape != (p, p):
        raise ArgumentError(f"G must be {p}×{p} (got {G.shape})")
    if lam < 0:
        raise ArgumentError(f"lambda must be >= 0 (got {lam})")
    beta = np.zeros(p) if beta_init is None else np.array(beta_init, dtype=np.float64)
    if beta.shape != (p,):
        raise ArgumentError(f"warm start must have length {p}")
    if p == 0:
        return LassoSolution(beta, 0.0, 0, float(lam))

    c = b - G @ beta
    total = 0
    while True:
        sweeps, converged, monotone = _coordinate_descent(G, b, float(lam), beta, c, max_sweeps - total, tol)
        total += sweeps
        if not monotone:
            raise NumericError(f"coordinate descent objective increased (λ={lam:.3e})")
        residual = kkt_residual(G, b, beta, lam)
        if converged and residual <= kkt_tol:
            return LassoSolution(beta, residual, total, float(lam))
        if not converged or total >= max_sweeps or tol <= MIN_CHANGE_TOL:
            raise ConvergenceError(
                f"coordinate descent did not converge in {total} sweeps "
                f"(λ={lam:.3e}, KKT residual {residual:.3e})",
                beta=beta.copy(), kkt_residual=residual, sweeps=total,
            )
        # small changes but KKT still loose: tighten and keep sweeping
        tol = max(tol / 100.0, MIN_CHANGE_TOL)
        c = b - G @ beta


def lasso_path(G, b, lambdas, stop=None, **kwargs):
    """
    Solutions along `lambdas` (descending), each warm-started from the last.
    The path ends at the first point that does not converge, or right after
    a solution for which `stop(solution)` is true, so the returned list can
    be shorter than `lambdas`.
    """
    solutions = []
    beta = None
    for lam in lambdas:
        try:
            sol = solve_lasso(G, b, lam, beta_init=beta, **kwargs)
        except ConvergenceError as e:
            log.debug(f"[lasso] path ends at λ={lam:.3e}: {e}")
            break
        solutions.append(sol)
        if stop is not None and stop(sol):
            break
        beta = sol.beta
    return solutions
