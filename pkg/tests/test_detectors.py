import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from cfardet import detectors as det
from cfardet.model_sim import (AdaptiveSpec, LinearGaussianSpec, ar1_covariance, covariance_with_condition,
                               sample_adaptive, sample_linear_gaussian, scaled_identity)
from cfardet.rng import stream

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def _random_spec(seed, n=6, d_r=2, s2=1.0):
    rng = stream(seed, "spec")
    return LinearGaussianSpec(rng.standard_normal((n, d_r)), ar1_covariance(n), s2)


class TestLRT:
    def test_equidistant_point(self):
        assert det.lrt(0.5, stats.norm(0, 1), stats.norm(1, 1)) == pytest.approx(0.0, abs=1e-15)

    def test_closed_form(self):
        assert det.lrt(1.0, stats.norm(0, 1), stats.norm(1, 1)) == pytest.approx(1.0)

    def test_zero_null_density(self):
        with pytest.raises(ValueError):
            det.lrt(2.0, stats.uniform(0, 1), stats.norm(0, 1))

    def test_matches_pbl(self):
        spec = _random_spec(0, s2=2.5)
        z_n = [1.3, 0.4]
        cov = spec.covariance(z_n)
        big = cov + 2.5 * spec.design @ spec.design.T
        x = stream(1).standard_normal((100, spec.n))
        ratio = det.lrt(x, stats.multivariate_normal(np.zeros(spec.n), cov),
                        stats.multivariate_normal(np.zeros(spec.n), big))
        np.testing.assert_allclose(det.pbl(x, spec, z_n), ratio, rtol=1e-10, atol=1e-10)


class TestGlrtDC:
    @pytest.mark.parametrize("x, expected", [([1, 1, 1, 1], 4.0), ([1, -1], 0.0), ([2, 0], 1.0)])
    def test_examples(self, x, expected):
        assert det.glrt_dc(np.array(x, dtype=float)) == pytest.approx(expected)

    def test_zero_input(self):
        with pytest.raises(ValueError):
            det.glrt_dc(np.zeros(3))

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 6, elements=finite), st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
    def test_scale_invariance(self, x, c):
        if np.sum(x * x) < 1e-6:
            return
        assert det.glrt_dc(c * x) == pytest.approx(det.glrt_dc(x), rel=1e-9, abs=1e-12)


class TestGlrtLinear:
    def test_orthogonal_input(self):
        spec = LinearGaussianSpec(np.eye(3)[:, :1], scaled_identity(3))
        assert det.glrt_linear(np.array([0.0, 1.0, -2.0]), spec, [1.0]) == 0.0

    def test_square_design(self):
        spec = LinearGaussianSpec(np.eye(4), ar1_covariance(4))
        x = stream(2).standard_normal(4)
        cov = spec.covariance([1.5, 0.3])
        assert det.glrt_linear(x, spec, [1.5, 0.3]) == pytest.approx(x @ np.linalg.solve(cov, x), rel=1e-12)

    def test_two_step_oracle(self):
        # plug the weighted least squares estimate into the Gaussian log likelihood
        spec = _random_spec(3)
        z_n = [0.8, -0.2]
        cov = spec.covariance(z_n)
        prec = np.linalg.inv(cov)
        h = spec.design
        for x in stream(4).standard_normal((10, spec.n)):
            z_hat = np.linalg.solve(h.T @ prec @ h, h.T @ prec @ x)
            mvn = stats.multivariate_normal
            oracle = 2 * (mvn(h @ z_hat, cov).logpdf(x) - mvn(np.zeros(spec.n), cov).logpdf(x))
            assert det.glrt_linear(x, spec, z_n) == pytest.approx(oracle, abs=1e-9)

    def test_null_distribution_chi2(self):
        spec = _random_spec(5, n=10, d_r=2)
        x = sample_linear_gaussian(spec, [0.0, 0.0], [1.0, 0.5], seed=6, size=100000)
        assert stats.kstest(det.glrt_linear(x, spec, [1.0, 0.5]), "chi2", args=(2,)).pvalue > 0.01


class TestPBL:
    def test_hand_example(self):
        spec = LinearGaussianSpec(np.array([[1.0], [0.0]]), scaled_identity(2), 3.0)
        assert det.pbl(np.zeros(2), spec, [1.0]) == pytest.approx(-np.log(4.0))
        assert det.c_term(spec, [1.0]) == pytest.approx(-np.log(4.0))

    def test_c_term_zero_prior(self):
        spec = LinearGaussianSpec(np.ones((3, 1)), scaled_identity(3), 0.0)
        assert det.c_term(spec, [2.0]) == 0.0

    def test_large_prior_limit(self):
        spec = _random_spec(7, s2=1e8)
        x = stream(8).standard_normal((20, spec.n))
        z_n = [1.1, 0.3]
        diff = det.pbl(x, spec, z_n) - det.glrt_linear(x, spec, z_n) - det.c_term(spec, z_n)
        assert np.max(np.abs(diff)) < 1e-6

    def test_unreduced_form(self):
        spec = _random_spec(9, s2=0.7)
        z_n = [2.0, 0.6]
        cov = spec.covariance(z_n)
        big = cov + 0.7 * spec.design @ spec.design.T
        x = stream(10).standard_normal((50, spec.n))
        m = np.linalg.inv(cov) - np.linalg.inv(big)
        oracle = np.einsum("ti,ij,tj->t", x, m, x) + np.linalg.slogdet(cov)[1] - np.linalg.slogdet(big)[1]
        np.testing.assert_allclose(det.pbl(x, spec, z_n), oracle, atol=1e-9)

    def test_c_term_monotone_in_prior(self):
        base = _random_spec(11)
        values = [det.c_term(LinearGaussianSpec(base.design, base.noise_cov_fn, s2), [1.0, 0.2])
                  for s2 in (0.1, 1.0, 10.0, 100.0)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_rank_deficient_fisher(self):
        spec = LinearGaussianSpec(np.eye(3)[:, :1], scaled_identity(3))
        spec.design = np.zeros((3, 1))
        with pytest.raises(ValueError):
            det.glrt_linear(np.ones(3), spec, [1.0])


class TestAdaptive:
    def setup_method(self):
        self.identity_secondary = np.sqrt(3.0) * np.eye(3)

    def test_identity_covariance(self):
        e1 = np.eye(3)[0]
        assert det.amf(e1, self.identity_secondary, e1) == pytest.approx(1.0)

    def test_orthogonal(self):
        e1, e2 = np.eye(3)[:2]
        assert det.amf(e2, self.identity_secondary, e1) == pytest.approx(0.0)
        assert det.kelly(e2, self.identity_secondary, e1) == pytest.approx(0.0)

    def test_explicit_inverse_oracle(self):
        rng = stream(12)
        s = rng.standard_normal(5)
        x = rng.standard_normal((20, 5))
        sec = rng.standard_normal((20, 9, 5))
        for xi, si in zip(x, sec):
            inv = np.linalg.inv(si.T @ si / 9)
            a = (s @ inv @ xi) ** 2 / (s @ inv @ s)
            assert det.amf(xi, si, s) == pytest.approx(a, rel=1e-10)
            assert det.kelly(xi, si, s) == pytest.approx(a / (1 + xi @ inv @ xi), rel=1e-10)
            inv_l = np.linalg.inv(si.T @ si / 9 + 0.03 * np.eye(5))
            lam = (s @ inv_l @ xi) ** 2 / (s @ inv_l @ s)
            assert det.lamf(xi, si, s, 0.03) == pytest.approx(lam, rel=1e-10)

    def test_heavy_loading_limit(self):
        rng = stream(13)
        s, x = rng.standard_normal(4), rng.standard_normal(4)
        sec = rng.standard_normal((6, 4))
        limit = (s @ x) ** 2 / (s @ s)
        assert det.lamf(x, sec, s, 1e9) * 1e9 == pytest.approx(limit, rel=1e-6)

    def test_singular_sample_covariance(self):
        with pytest.raises(ValueError):
            det.amf(np.ones(4), np.ones((3, 4)), np.ones(4))
        with pytest.raises(ValueError):
            det.lamf(np.ones(4), np.ones((5, 4)), np.ones(4), 0.0)

    def test_features(self):
        e1 = np.eye(3)[0]
        f = det.lamf_features(e1, self.identity_secondary, e1, [0.0])
        np.testing.assert_allclose(f, [1.0, 1.0, 1.0])
        rng = stream(14)
        s, x, sec = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal((8, 4))
        f = det.lamf_features(x, sec, s).reshape(10, 3)
        assert f.shape == (10, 3)
        assert np.all(np.diff(f[:, 1]) < 0) and np.all(np.diff(f[:, 2]) < 0)
        assert f[0, 0] ** 2 / f[0, 1] == pytest.approx(det.amf(x, sec, s), rel=1e-12)

    def test_amf_scale_cfar(self):
        cov = covariance_with_condition(4, 20.0, seed=1)
        scores = []
        for c, seed in ((1.0, 15), (9.0, 16)):
            p, sec = sample_adaptive(AdaptiveSpec(np.ones(4), c * cov, 8), 0, seed=seed, size=10000)
            scores.append(det.amf(p, sec, np.ones(4)))
        assert stats.ks_2samp(*scores).pvalue > 0.01

    def test_lamf_not_cfar(self):
        scores = []
        for cond, seed in ((1.0, 17), (50.0, 18)):
            spec = AdaptiveSpec(np.ones(8) / np.sqrt(8), covariance_with_condition(8, cond), 8)
            p, sec = sample_adaptive(spec, 0, seed=seed, size=10000)
            scores.append(det.lamf(p, sec, spec.signature, 0.03))
        assert stats.ks_2samp(*scores).pvalue < 0.01


class TestDCFeatures:
    def test_constant(self):
        np.testing.assert_allclose(det.dc_features(np.ones(4)), [1.0, 0.0, 1.0, 0.0])

    def test_two_points(self):
        np.testing.assert_allclose(det.dc_features(np.array([0.0, 2.0])), [1.0, 1.0, 1.0, 1.0])

    def test_too_short(self):
        with pytest.raises(ValueError):
            det.dc_features(np.ones(1))

    @settings(max_examples=50, deadline=None)
    @given(arrays(float, 7, elements=finite), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, x, rnd):
        perm = list(range(7))
        rnd.shuffle(perm)
        np.testing.assert_allclose(det.dc_features(x[perm]), det.dc_features(x), rtol=1e-12, atol=1e-9)
