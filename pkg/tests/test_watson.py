import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from qmap.forward.watson import (odi_to_kappa, orthonormal_frame, watson_average, watson_sample,
                                 watson_tau1)


def tau1_mpmath(kappa):
    """High-precision reference by mpmath quadrature."""
    mpmath.mp.dps = 30
    num = mpmath.quad(lambda t: t**2 * mpmath.exp(kappa * t**2), [0, 1])
    den = mpmath.quad(lambda t: mpmath.exp(kappa * t**2), [0, 1])
    return float(num / den)


def tau1_dawson(kappa):
    s = np.sqrt(kappa)
    return 1 / (2 * s * special.dawsn(s)) - 1 / (2 * kappa)


class TestKappa:
    def test_endpoints(self):
        assert odi_to_kappa(1.0) == pytest.approx(0.0, abs=1e-15)
        assert odi_to_kappa(0.0) == np.inf

    def test_half(self):
        assert odi_to_kappa(0.5) == pytest.approx(1.0)

    def test_range_check(self):
        with pytest.raises(ValueError):
            odi_to_kappa(1.5)


class TestTau1:
    def test_uniform_limit(self):
        assert watson_tau1(0.0) == pytest.approx(1 / 3, abs=1e-12)

    def test_aligned_limit(self):
        assert watson_tau1(np.inf) == 1.0

    @pytest.mark.parametrize("kappa", [16.0, 0.5, 4.0, 64.0, 500.0])
    def test_high_precision_oracle(self, kappa):
        assert watson_tau1(kappa) == pytest.approx(tau1_mpmath(kappa), rel=1e-8)

    @given(st.floats(1e-2, 1e3))
    def test_dawson_closed_form(self, kappa):
        assert watson_tau1(kappa) == pytest.approx(tau1_dawson(kappa), rel=1e-8)

    def test_monotone_and_bounded(self):
        k = np.array([0, 0.1, 1, 2, 4, 8, 16, 64, 256, 1e4])
        t = watson_tau1(k)
        assert np.all(np.diff(t) > 0)
        assert np.all((t >= 1 / 3 - 1e-12) & (t <= 1))


class TestSampler:
    def test_uniform_when_kappa_zero(self):
        n = watson_sample(np.random.default_rng(0), [0, 0, 1.0], 0.0, 100_000)
        assert stats.kstest(n[:, 2], stats.uniform(-1, 2).cdf).pvalue > 0.01

    def test_concentrated(self, rng):
        mu = np.array([1.0, 2.0, 2.0]) / 3
        n = watson_sample(rng, mu, 1e4, 10_000)
        assert np.mean((n @ mu) ** 2) > 0.99

    @pytest.mark.parametrize("kappa", [1.0, 16.0])
    def test_moment_matches_tau1(self, rng, kappa):
        mu = np.array([0.0, 0.6, 0.8])
        c2 = (watson_sample(rng, mu, kappa, 100_000) @ mu) ** 2
        se = c2.std() / np.sqrt(len(c2))
        assert abs(c2.mean() - watson_tau1(kappa)) < 3 * se

    def test_antipodal_symmetry(self, rng):
        mu = np.array([0.0, 0.0, 1.0])
        n = watson_sample(rng, mu, 8.0, 50_000)
        assert abs(np.mean(n @ mu)) < 4 / np.sqrt(50_000)

    def test_unit_norm(self, rng):
        n = watson_sample(rng, [1.0, 0, 0], 3.0, 1000)
        np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1, atol=1e-12)

    def test_single_draw_shape(self, rng):
        assert watson_sample(rng, [1.0, 0, 0], 3.0).shape == (3,)


class TestQuadrature:
    def test_frame_orthonormal(self, rng):
        mu = rng.standard_normal(3)
        f = orthonormal_frame(mu)
        np.testing.assert_allclose(f @ f.T, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(f[2], mu / np.linalg.norm(mu))

    @pytest.mark.parametrize("kappa", [0.0, 2.0, 30.0, 900.0])
    def test_average_reproduces_tau1(self, kappa):
        got = watson_average(kappa, 16, lambda t, c: t * t + 0 * c)
        assert got == pytest.approx(watson_tau1(kappa), rel=1e-10)

    def test_order_floor(self):
        with pytest.raises(ValueError):
            watson_average(1.0, 4, lambda t, c: t)
