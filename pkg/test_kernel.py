from fractions import Fraction

import numpy as np
import pytest

from errors import ArgumentError, DomainError, NumericError
from Kernels.kernel import (KernelSpec, cross_gram, eval_kernel, gram_matrix,
                            kernel_section_sum, smoother_pair)


def smoother_gap(pair):
    """‖M − (I + K/(nλ₂))⁻¹‖_F / ‖M‖_F with an independent dense inverse."""
    reference = np.linalg.inv(np.eye(pair.n) + pair.gram / pair.scale)
    return float(np.linalg.norm(pair.M - reference) / np.linalg.norm(pair.M))


class TestKernelSpec:

    def test_sobolev3_value_at_origin(self):
        # 1 + k1(0)² + k2(0)² + k6(0) with k1(0) = −1/2, k2(0) = 1/12, k6(0) = (1/42)/720
        expected = 1.0 + 0.25 + 1.0 / 144.0 + 1.0 / (42.0 * 720.0)
        assert eval_kernel(KernelSpec(), 0.0, 0.0) == pytest.approx(expected, rel=1e-14)
        assert KernelSpec().kappa == pytest.approx(expected, rel=1e-14)

    def test_sobolev3_value_against_exact_bernoulli_polynomials(self):
        s, t = Fraction(3, 10), Fraction(7, 10)
        k1 = lambda x: x - Fraction(1, 2)
        k2 = lambda x: (k1(x) ** 2 - Fraction(1, 12)) / 2
        b6 = lambda x: x**6 - 3 * x**5 + Fraction(5, 2) * x**4 - Fraction(1, 2) * x**2 + Fraction(1, 42)
        exact = 1 + k1(s) * k1(t) + k2(s) * k2(t) + b6(t - s) / 720
        assert exact == Fraction(907618931, 945000000)
        assert eval_kernel(KernelSpec(), 0.3, 0.7) == pytest.approx(float(exact), rel=1e-14)

    def test_sobolev3_is_symmetric(self):
        spec = KernelSpec()
        assert eval_kernel(spec, 0.2, 0.7) == pytest.approx(eval_kernel(spec, 0.7, 0.2), rel=1e-14)

    def test_gaussian_and_laplace(self):
        g = KernelSpec("gaussian", bandwidth=0.5)
        lap = KernelSpec("laplace", bandwidth=0.5)
        assert eval_kernel(g, 0.3, 0.3) == 1.0
        assert eval_kernel(g, 0.1, 0.4) == pytest.approx(np.exp(-0.09 / 0.5), rel=1e-12)
        assert eval_kernel(lap, 0.1, 0.4) == pytest.approx(np.exp(-0.3 / 0.5), rel=1e-12)

    @pytest.mark.parametrize("t", [-0.1, 1.2, np.nan])
    def test_points_outside_unit_interval(self, t):
        with pytest.raises(DomainError):
            eval_kernel(KernelSpec(), 0.5, t)

    def test_invalid_spec(self):
        with pytest.raises(ArgumentError):
            KernelSpec("polynomial")
        with pytest.raises(ArgumentError):
            KernelSpec("gaussian", bandwidth=0.0)
        with pytest.raises(ArgumentError):
            KernelSpec("sobolev3", input_dim=2)

    def test_multivariate_gaussian(self, rng):
        spec = KernelSpec("gaussian", bandwidth=0.3, input_dim=2)
        pts = rng.uniform(size=(5, 2))
        K = cross_gram(spec, pts, pts)
        d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
        np.testing.assert_allclose(K, np.exp(-d2 / (2 * 0.09)), rtol=1e-12)


class TestGram:

    @pytest.mark.parametrize("kind", ["sobolev3", "gaussian", "laplace"])
    def test_gram_is_symmetric_psd(self, rng, kind):
        K = gram_matrix(KernelSpec(kind, bandwidth=0.2), rng.uniform(size=40))
        np.testing.assert_array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() > -1e-10

    @pytest.mark.parametrize("kind", ["sobolev3", "gaussian", "laplace"])
    def test_gram_follows_point_permutation(self, rng, kind):
        spec = KernelSpec(kind, bandwidth=0.3)
        t = rng.uniform(size=25)
        perm = rng.permutation(25)
        np.testing.assert_allclose(gram_matrix(spec, t[perm]), gram_matrix(spec, t)[np.ix_(perm, perm)],
                                   rtol=0, atol=1e-14)

    def test_section_sum(self, rng):
        spec = KernelSpec()
        train = rng.uniform(size=12)
        coef = rng.standard_normal(12)
        new = rng.uniform(size=4)
        expected = [sum(c * eval_kernel(spec, t, s) for c, t in zip(coef, train)) for s in new]
        np.testing.assert_allclose(kernel_section_sum(spec, train, coef, new), expected, rtol=1e-12)


class TestSmootherPair:

    def test_identities_on_random_instances(self, rng):
        for _ in range(50):
            n = int(rng.integers(5, 30))
            K = gram_matrix(KernelSpec(), rng.uniform(size=n))
            lambda2 = float(10 ** rng.uniform(-4, 0))
            pair = smoother_pair(K, lambda2)
            assert smoother_gap(pair) <= 1e-8
            w = np.linalg.eigvalsh((pair.A + pair.A.T) / 2)
            assert w.min() >= -1e-10
            assert w.max() < 1.0

    def test_apply_residual_matches_dense(self, small_gram, rng):
        pair = smoother_pair(small_gram, 0.01)
        v = rng.standard_normal(small_gram.shape[0])
        np.testing.assert_allclose(pair.apply_residual(v), pair.M @ v, atol=1e-12)

    def test_square_root(self, small_gram):
        pair = smoother_pair(small_gram, 0.05)
        root = pair.sqrt_residual
        np.testing.assert_allclose(root @ root, pair.M, atol=1e-10)

    def test_invalid_arguments(self, small_gram):
        with pytest.raises(ArgumentError):
            smoother_pair(small_gram, 0.0)
        with pytest.raises(ArgumentError):
            smoother_pair(small_gram[:, :-1], 0.1)

    def test_indefinite_gram(self):
        with pytest.raises(NumericError):
            smoother_pair(-10.0 * np.eye(4), 1e-3)
