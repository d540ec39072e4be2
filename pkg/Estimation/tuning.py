"""
Penalty selection → PenaltyConfig / λ⁰
Per-machine k-fold cross-validation over a (λ₁, λ₂) grid, optional CV of the
nodewise multiplier, and the plug-in rates used by the "theory" mode.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import KFold

from errors import ArgumentError, ConvergenceError, NumericError, TuningError
from Estimation import lasso
from Estimation.debias import NODEWISE_CHANGE_TOL, default_lambda0
from Estimation.profiled_lasso import PenaltyConfig, fit_path, predict_from_cross, weighted_system
from Kernels.kernel import gram_matrix, smoother_pair
from Simulation.datagen import stream

log = logging.getLogger(__name__)

LAMBDA1_COUNT = 20
LAMBDA1_RATIO = 1e-3
LAMBDA2_COUNT = 10
LAMBDA2_SPAN = 10.0
# held-out error rising this many points in a row ends a CV path
CV_PATIENCE = 3
CV_MAX_SWEEPS = 5_000


def _sorted_grid(values, descending):
    grid = np.unique(np.asarray(values, dtype=float))
    if grid.size == 0 or not np.all(grid > 0) or not np.all(np.isfinite(grid)):
        raise ArgumentError(f"penalty grids must be nonempty and positive (got {values!r})")
    return tuple(float(v) for v in (grid[::-1] if descending else grid))


@dataclass(frozen=True)
class CvPlan:
    """
    k-fold plan for one machine. An empty `lambda1_grid` means the default
    geometric grid below the null threshold; `lambda2_grid` is always explicit.
    Grids are deduplicated; λ₁ is stored descending, λ₂ ascending.
    `patience=None` scores every λ₁ point instead of stopping a path early.
    """
    lambda2_grid: tuple
    lambda1_grid: Optional[tuple] = None
    k: int = 5
    lambda1_count: int = LAMBDA1_COUNT
    lambda1_ratio: float = LAMBDA1_RATIO
    lambda0_multipliers: tuple = (1.0,)
    tune_lambda0: bool = False
    seed: int = 0
    patience: Optional[int] = CV_PATIENCE
    max_sweeps: int = CV_MAX_SWEEPS

    def __post_init__(self):
        if self.k < 2:
            raise ArgumentError(f"need at least 2 folds (got k={self.k})")
        if self.lambda1_count < 1 or not 0 < self.lambda1_ratio <= 1:
            raise ArgumentError("lambda1_count must be >= 1 and lambda1_ratio in (0, 1]")
        if (self.patience is not None and self.patience < 1) or self.max_sweeps < 1:
            raise ArgumentError("patience must be None or >= 1 and max_sweeps >= 1")
        object.__setattr__(self, "lambda2_grid", _sorted_grid(self.lambda2_grid, descending=False))
        if self.lambda1_grid is not None:
            object.__setattr__(self, "lambda1_grid", _sorted_grid(self.lambda1_grid, descending=True))
        object.__setattr__(self, "lambda0_multipliers", _sorted_grid(self.lambda0_multipliers, descending=True))


# ── Default grids ─────────────────────────────────────────────────

def default_lambda2_grid(p, N, count=LAMBDA2_COUNT, span=LAMBDA2_SPAN):
    """Geometric grid centred on log p / N, from centre/span to centre·span."""
    if p < 2 or N < 1:
        raise ArgumentError(f"need p >= 2 and N >= 1 (got p={p}, N={N})")
    centre = math.log(p) / N
    if count == 1:
        return (centre,)
    return tuple(float(v) for v in np.geomspace(centre / span, centre * span, count))


def default_lambda1_grid(lambda_max, count=LAMBDA1_COUNT, ratio=LAMBDA1_RATIO):
    if not lambda_max > 0:
        raise TuningError(f"null threshold is {lambda_max}; the response carries no linear signal to tune on")
    if count == 1:
        return (float(lambda_max),)
    return tuple(float(v) for v in np.geomspace(lambda_max, lambda_max * ratio, count))


def lambda1_max(shard, gram, lambda2_grid):
    """Largest null threshold max_j |X_j'MY|/n over the λ₂ grid."""
    return max(
        lasso.null_threshold(weighted_system(shard, smoother_pair(gram, lam2)).b)
        for lam2 in lambda2_grid
    )


def theory_penalty(p, n, N, lambda1_scale=1.0):
    """λ₁ = scale·sqrt(log p / n), λ₂ = log p / N."""
    if p < 2:
        raise ArgumentError(f"p must be >= 2 (got {p})")
    rate = math.sqrt(math.log(p) / n)
    return PenaltyConfig(lambda1=lambda1_scale * rate, lambda2=math.log(p) / N)


# ── (λ₁, λ₂) cross-validation ─────────────────────────────────────

def fold_indices(n, k, seed, machine_id=0):
    """Seeded split of range(n) into k near-equal (train, test) pairs."""
    state = int(stream(seed, machine_id).integers(2**31 - 1))
    return list(KFold(n_splits=k, shuffle=True, random_state=state).split(np.arange(n)))


class _HeldOutStop:
    """Scores each path point on the held-out rows; stops after `patience` consecutive rises."""

    def __init__(self, test_shard, cross, size, patience):
        self.test_shard = test_shard
        self.cross = cross
        self.patience = patience
        self.scores = np.full(size, np.inf)
        self.count = 0
        self.rises = 0

    def __call__(self, fit):
        resid = self.test_shard.Y - predict_from_cross(fit, self.test_shard.X, self.cross)
        score = float(np.mean(resid * resid))
        self.rises = self.rises + 1 if self.count and score > self.scores[self.count - 1] else 0
        self.scores[self.count] = score
        self.count += 1
        return self.patience is not None and self.rises >= self.patience


def _fold_scores(shard, gram, train, test, lambda1_grid, lambda2, patience=CV_PATIENCE,
                 max_sweeps=CV_MAX_SWEEPS):
    """
    Held-out MSE along one warm-started λ₁ path. The path stops at the first
    point that fails to converge within `max_sweeps`, or once the held-out
    error has risen `patience` times in a row; unvisited points score +∞.
    """
    test_shard = shard.subset(test)
    scorer = _HeldOutStop(test_shard, gram[np.ix_(test, train)], len(lambda1_grid), patience)
    try:
        fit_path(shard.subset(train), gram[np.ix_(train, train)], lambda1_grid, lambda2,
                 stop=scorer, max_sweeps=max_sweeps)
    except NumericError as e:
        log.debug(f"[tuning] λ₂={lambda2:.3e} failed on a fold: {e}")
        return np.full(len(lambda1_grid), np.inf)
    if scorer.count < len(lambda1_grid):
        log.debug(f"[tuning] λ₂={lambda2:.3e}: path stopped after {scorer.count}/{len(lambda1_grid)} points")
    return scorer.scores


def cv_scores(shard, spec, plan, gram=None, n_jobs=1):
    """
    Mean held-out squared prediction error for every grid point.
    Returns (lambda1_grid, lambda2_grid, scores) with scores[i2, i1].
    """
    k = plan.k
    if shard.n < 2 * k:
        raise ArgumentError(f"shard has {shard.n} rows, {k}-fold CV needs at least {2 * k}")
    gram = gram_matrix(spec, shard.T) if gram is None else gram
    lambda2_grid = plan.lambda2_grid
    lambda1_grid = plan.lambda1_grid
    if lambda1_grid is None:
        lambda1_grid = default_lambda1_grid(lambda1_max(shard, gram, lambda2_grid),
                                            plan.lambda1_count, plan.lambda1_ratio)

    folds = fold_indices(shard.n, k, plan.seed, shard.machine_id)
    tasks = [(f, lam2) for f in range(k) for lam2 in lambda2_grid]
    stopping = {"patience": plan.patience, "max_sweeps": plan.max_sweeps}
    if n_jobs == 1:
        per_task = [_fold_scores(shard, gram, *folds[f], lambda1_grid, lam2, **stopping) for f, lam2 in tasks]
    else:
        per_task = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_fold_scores)(shard, gram, *folds[f], lambda1_grid, lam2, **stopping) for f, lam2 in tasks
        )
    # (fold, λ₂, λ₁) → mean over folds
    stacked = np.asarray(per_task).reshape(k, len(lambda2_grid), len(lambda1_grid))
    return lambda1_grid, lambda2_grid, stacked.mean(axis=0)


def pick_penalty(lambda1_grid, lambda2_grid, scores):
    """Smallest score; ties go to the larger λ₁, then the larger λ₂."""
    best = float(np.min(scores))
    if not np.isfinite(best):
        raise TuningError("every (λ₁, λ₂) grid point failed on at least one fold")
    for i1 in range(len(lambda1_grid)):          # λ₁ descending
        for i2 in reversed(range(len(lambda2_grid))):  # λ₂ largest first
            if scores[i2, i1] == best:
                return PenaltyConfig(lambda1_grid[i1], lambda2_grid[i2])
    raise TuningError("no grid point attains the minimum score")


def cv_select(shard, spec, plan, gram=None, n_jobs=1):
    lambda1_grid, lambda2_grid, scores = cv_scores(shard, spec, plan, gram=gram, n_jobs=n_jobs)
    chosen = pick_penalty(lambda1_grid, lambda2_grid, scores)
    log.debug(
        f"[tuning] shard {shard.machine_id}: λ₁={chosen.lambda1:.3e} λ₂={chosen.lambda2:.3e} "
        f"(cv mse {float(np.min(scores)):.4f} over {scores.size} points)"
    )
    return chosen


# ── λ⁰ cross-validation ───────────────────────────────────────────

def _nodewise_rss(train, test, lambda0s):
    """Held-out Σ_j ‖X̃_j − X̃_{−j}θ_j‖² for each λ⁰ (descending, warm-started per column)."""
    n, p = train.shape
    sigma = train.T @ train / n
    rss = np.zeros(len(lambda0s))
    for j in range(p):
        others = np.delete(np.arange(p), j)
        G = sigma[np.ix_(others, others)]
        b = sigma[others, j]
        beta = None
        for i, lam in enumerate(lambda0s):
            try:
                sol = lasso.solve_lasso(G, b, lam, beta_init=beta, tol=NODEWISE_CHANGE_TOL)
            except ConvergenceError:
                rss[i] = np.inf
                beta = None
                continue
            beta = sol.beta
            resid = test[:, j] - test[:, others] @ beta
            rss[i] += float(resid @ resid)
    return rss


def cv_select_lambda0(design_tilde, plan, machine_id=0):
    """
    λ⁰ = c·sqrt(log p / n) with c picked from plan.lambda0_multipliers by
    k-fold CV of the nodewise residuals on X̃. Ties go to the larger c.
    Without `tune_lambda0` the largest multiplier is returned unscored.
    """
    Xt = np.asarray(design_tilde, dtype=float)
    n, p = Xt.shape
    multipliers = plan.lambda0_multipliers
    if not plan.tune_lambda0 or len(multipliers) == 1:
        return default_lambda0(p, n, multipliers[0])
    if n < 2 * plan.k:
        raise ArgumentError(f"design has {n} rows, {plan.k}-fold CV needs at least {2 * plan.k}")

    lambda0s = [default_lambda0(p, n, c) for c in multipliers]
    total = np.zeros(len(lambda0s))
    # separate stream from the (λ₁, λ₂) folds
    for train, test in fold_indices(n, plan.k, plan.seed, machine_id + 1_000_000):
        total += _nodewise_rss(Xt[train], Xt[test], lambda0s)
    if not np.any(np.isfinite(total)):
        raise TuningError("every λ⁰ multiplier failed in nodewise cross-validation")
    best = int(np.argmin(total))  # first minimum = largest multiplier
    log.debug(f"[tuning] λ⁰ multiplier {multipliers[best]} (rss {total[best]:.4f})")
    return lambda0s[best]
