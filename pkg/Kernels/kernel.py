"""
Kernel functions → Gram and smoother matrices
Positive-definite kernels on [0,1]^q, their Gram matrices, and the
smoother pair A = K(nλ₂I + K)⁻¹, M = I − A used by the profiled estimator.

Python 3.10+. numpy / scipy only.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from errors import ArgumentError, DomainError, NumericError

log = logging.getLogger(__name__)

KINDS = ("sobolev3", "gaussian", "laplace")
JITTER = 1e-10


# ── Sobolev-3 reproducing kernel ──────────────────────────────────
# Scaled Bernoulli polynomials k_v(x) = B_v(x) / v!

def _k1(x):
    return x - 0.5


def _k2(x):
    return (_k1(x) ** 2 - 1.0 / 12.0) / 2.0


def _k6(x):
    b6 = x**6 - 3 * x**5 + 2.5 * x**4 - 0.5 * x**2 + 1.0 / 42.0
    return b6 / 720.0


def _sobolev3(s, t):
    """K(s,t) = 1 + k1(s)k1(t) + k2(s)k2(t) + k6(|s−t|); broadcasts."""
    return 1.0 + _k1(s) * _k1(t) + _k2(s) * _k2(t) + _k6(np.abs(s - t))


# ── Kernel specification ──────────────────────────────────────────

@dataclass(frozen=True)
class KernelSpec:
    kind: str = "sobolev3"
    bandwidth: float = 1.0
    input_dim: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"Unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1:
            raise ArgumentError(f"input_dim must be >= 1 (got {self.input_dim})")
        if self.kind == "sobolev3" and self.input_dim != 1:
            raise ArgumentError("sobolev3 kernel is defined on [0,1] only (input_dim = 1)")
        if self.kind != "sobolev3" and not self.bandwidth > 0:
            raise ArgumentError(f"bandwidth must be positive (got {self.bandwidth})")

    @property
    def kappa(self):
        """sup_t k(t,t)."""
        if self.kind == "sobolev3":
            # attained at the endpoints of [0,1]
            return float(_sobolev3(0.0, 0.0))
        return 1.0

    def as_points(self, points):
        """Validate and reshape to an (n, q) float array."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 0:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            pts = pts.reshape(-1, 1) if self.input_dim == 1 else pts.reshape(1, -1)
        if pts.shape[1] != self.input_dim:
            raise ArgumentError(
                f"points have dimension {pts.shape[1]}, kernel expects {self.input_dim}"
            )
        if not np.all(np.isfinite(pts)) or np.any(pts < 0.0) or np.any(pts > 1.0):
            raise DomainError("kernel inputs must lie in [0,1]^q")
        return pts


def eval_kernel(spec, s, t):
    """k(s, t) for two single points."""
    s = spec.as_points(s)
    t = spec.as_points(t)
    if s.shape[0] != 1 or t.shape[0] != 1:
        raise ArgumentError("eval_kernel takes single points; use cross_gram for batches")
    return float(cross_gram(spec, s, t)[0, 0])


def cross_gram(spec, left, right):
    """Matrix of k(left_i, right_j)."""
    left = spec.as_points(left)
    right = spec.as_points(right)
    if spec.kind == "sobolev3":
        return _sobolev3(left[:, 0][:, None], right[:, 0][None, :])
    dist = cdist(left, right, metric="euclidean")
    if spec.kind == "gaussian":
        return np.exp(-(dist**2) / (2.0 * spec.bandwidth**2))
    return np.exp(-dist / spec.bandwidth)


def gram_matrix(spec, points):
    pts = spec.as_points(points)
    if pts.shape[0] < 1:
        raise ArgumentError("gram_matrix needs at least one point")
    K = cross_gram(spec, pts, pts)
    return (K + K.T) / 2.0


# ── Smoother pair ─────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class SmootherPair:
    """
    Residual smoother M = I − A = nλ₂(nλ₂I + K)⁻¹ held as a Cholesky factor.
    Dense A and M are materialised on first access.
    """
    gram: np.ndarray = field(repr=False)
    lambda2: float
    factor: tuple = field(repr=False)
    jitter: float = 0.0

    @property
    def n(self):
        return self.gram.shape[0]

    @property
    def scale(self):
        return self.n * self.lambda2

    def solve(self, rhs):
        """(nλ₂I + K + jitter·I)⁻¹ rhs."""
        return scipy.linalg.cho_solve(self.factor, rhs, check_finite=False)

    def apply_residual(self, rhs):
        """M @ rhs without forming M."""
        return self.scale * self.solve(rhs)

    @cached_property
    def M(self):
        M = self.apply_residual(np.eye(self.n))
        return (M + M.T) / 2.0

    @cached_property
    def A(self):
        return np.eye(self.n) - self.M

    @cached_property
    def sqrt_residual(self):
        """Symmetric M^{1/2}; roundoff-negative eigenvalues clamped to 0."""
        w, V = scipy.linalg.eigh(self.M, check_finite=False)
        w = np.clip(w, 0.0, None)
        root = (V * np.sqrt(w)) @ V.T
        return (root + root.T) / 2.0


def smoother_pair(gram, lambda2):
    K = np.asarray(gram, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ArgumentError(f"gram must be square (got shape {K.shape})")
    if not lambda2 > 0:
        raise ArgumentError(f"lambda2 must be positive (got {lambda2})")
    n = K.shape[0]
    system = K + n * lambda2 * np.eye(n)
    try:
        factor = scipy.linalg.cho_factor(system, lower=True, check_finite=False)
        return SmootherPair(K, float(lambda2), factor)
    except np.linalg.LinAlgError:
        pass

    jitter = JITTER * max(float(np.trace(K)), 0.0) / n
    log.debug(f"[kernel] Cholesky failed, retrying with jitter {jitter:.3e}")
    try:
        factor = scipy.linalg.cho_factor(
            system + jitter * np.eye(n), lower=True, check_finite=False
        )
    except np.linalg.LinAlgError as e:
        raise NumericError(
            f"nλ₂I + K is not positive definite (n={n}, λ₂={lambda2}); "
            f"the Gram matrix is probably not PSD: {e}"
        )
    return SmootherPair(K, float(lambda2), factor, jitter)


def kernel_section_sum(spec, train_points, coef, new_points):
    """Σ_i coef_i k(T_i, t) for every t in new_points."""
    return cross_gram(spec, new_points, train_points) @ np.asarray(coef, dtype=float)
