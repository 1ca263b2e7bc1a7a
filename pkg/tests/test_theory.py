import math

import numpy as np
import pytest
from scipy import stats

from cfardet import detectors, theory
from cfardet.model_sim import LinearGaussianSpec, ar1_covariance, sample_linear_gaussian, scaled_identity
from cfardet.rng import stream


def random_spec(seed, n=8, d_r=2, family=ar1_covariance):
    return LinearGaussianSpec(stream(seed, "spec").standard_normal((n, d_r)), family(n))


@pytest.mark.parametrize("x, dof, lam", [(3.0, 1, 0.0), (3.0, 1, 2.5), (10.0, 4, 7.0), (150.0, 2, 120.0)])
def test_noncentral_chi2_cdf_matches_scipy(x, dof, lam):
    assert theory.noncentral_chi2_cdf(x, dof, lam) == pytest.approx(stats.ncx2.cdf(x, dof, lam) if lam
                                                                    else stats.chi2.cdf(x, dof), abs=1e-9)


class TestFisher:
    @pytest.mark.parametrize("z", [0.3, 1.0, 4.0])
    def test_scale_family_nuisance_block(self, z):
        spec = random_spec(0, n=12, d_r=1, family=scaled_identity)
        blocks = theory.fisher_blocks(spec, [0.7], [z])
        assert blocks.nn[0, 0] == pytest.approx(12 / (2 * z * z), rel=1e-6)

    def test_signal_block_and_orthogonality(self):
        for seed in range(5):
            spec = random_spec(seed)
            z_n = np.array([1.3, 0.4])
            blocks = theory.fisher_blocks(spec, [0.5, -1.0], z_n)
            explicit = spec.design.T @ np.linalg.inv(spec.covariance(z_n)) @ spec.design
            np.testing.assert_allclose(blocks.rr, explicit, rtol=1e-10)
            assert np.max(np.abs(blocks.rn)) < 1e-6
            full = blocks.full
            np.testing.assert_array_equal(full, full.T)
            assert np.all(np.linalg.eigvalsh(full) > 0)

    def test_ar1_nuisance_block_oracle(self):
        spec = random_spec(1, n=6)
        z_n = np.array([2.0, 0.3])
        cov = spec.covariance(z_n)
        lag = np.abs(np.subtract.outer(np.arange(6), np.arange(6)))
        # analytic covariance derivatives of z0 * z1^|i-j|
        d0 = 0.3 ** lag
        d1 = 2.0 * lag * 0.3 ** np.maximum(lag - 1, 0)
        inv = np.linalg.inv(cov)
        oracle = np.array([[0.5 * np.trace(inv @ a @ inv @ b) for b in (d0, d1)] for a in (d0, d1)])
        np.testing.assert_allclose(theory.fisher_blocks(spec, [0.0, 0.0], z_n).nn, oracle, rtol=1e-7)

    def test_noncentrality_is_quadratic(self):
        spec = random_spec(2)
        z_n, z_r = [1.0, 0.2], np.array([0.4, 0.1])
        assert theory.noncentrality(spec, 3 * z_r, z_n) == pytest.approx(9 * theory.noncentrality(spec, z_r, z_n),
                                                                       rel=1e-12)


class TestIdentity:
    def test_residual_shrinks_with_prior_variance(self):
        residuals, exact = theory.check_pbl_glrt_identity(random_spec(3), [1.0, 0.5], trials=50)
        values = [residuals[s] for s in theory.SIGMA_SWEEP]
        assert all(b < a for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-5
        assert exact < 1e-9

    def test_unreduced_form_matches_density_ratio(self):
        spec = random_spec(4)
        z_n = np.array([0.8, -0.3])
        x = stream(5).standard_normal((4, 8))
        cov = spec.covariance(z_n)
        big = cov + spec.design @ spec.design.T
        ratio = 2 * (stats.multivariate_normal(np.zeros(8), big).logpdf(x)
                     - stats.multivariate_normal(np.zeros(8), cov).logpdf(x))
        np.testing.assert_allclose(theory.pbl_unreduced(x, spec, z_n), ratio, rtol=1e-10)


class TestAsymptotics:
    def test_glrt_laws(self):
        spec = random_spec(6, n=40, d_r=1)
        report = theory.check_asymptotics(spec, [0.4], [1.0, 0.3], trials=20000, seed=1)
        assert report.ks_pvalue > 0.01
        assert report.mean_z < 3.0
        assert report.quantiles_ok

    def test_small_n_is_rejected(self):
        with pytest.raises(ValueError):
            theory.check_asymptotics(random_spec(7, n=15), [0.1, 0.1], [1.0, 0.1], trials=10)


class TestBayesRisk:
    def test_risk_from_scores_example(self):
        r = theory._risk_from_scores([np.array([0.0, 1.0, 2.0, 3.0])], [np.array([1.0, 2.0, 3.0, 4.0])],
                                     [2.0], 0.25)
        assert r.fpr[0, 0] == 0.5 and r.fnr[0, 0] == 0.25
        assert r.risk[0] == pytest.approx(0.25 * 0.5 + 0.75 * 0.25)

    def test_extreme_thresholds(self):
        spec = random_spec(8)
        det = lambda x, z_n: detectors.glrt_linear(x, spec, z_n)
        r = theory.bayes_risk(det, [-np.inf, np.inf], spec, [np.array([1.0, 0.0])], p0=0.3, trials=200)
        np.testing.assert_allclose(r.risk, [0.3, 0.7])
        with pytest.raises(ValueError):
            theory.bayes_risk(det, 1.0, spec, [np.array([1.0, 0.0])], p0=1.5)

    def test_mismatched_glrt_is_chi2_and_reduces_to_glrt(self):
        spec = random_spec(9)
        z_n = np.array([1.5, 0.4])
        x = sample_linear_gaussian(spec, np.zeros(2), z_n, size=20000, rng=stream(10))
        mismatched = theory.wrong_covariance_glrt(np.eye(8))(x, z_n, spec)
        assert stats.kstest(mismatched, stats.chi2(2).cdf).pvalue > 0.01
        matched = theory.wrong_covariance_glrt(spec.covariance(z_n))(x[:50], z_n, spec)
        np.testing.assert_allclose(matched, detectors.glrt_linear(x[:50], spec, z_n), rtol=1e-9)
        energy = theory.energy_detector(x, z_n, spec)
        assert stats.kstest(energy, stats.chi2(8).cdf).pvalue > 0.01

    def test_glrt_has_lowest_risk(self):
        spec = random_spec(11, n=12)
        nuisances = [np.array([1.0, 0.0]), np.array([2.0, 0.5])]
        risks = theory.check_glrt_bayes_optimal(spec, nuisances, trials=10000, seed=2)
        glrt = risks["glrt"][0]
        assert risks["glrt"][1] == 0.0
        for name, (risk, se) in risks.items():
            assert glrt <= risk + 2 * se


class TestUnknownScale:
    def test_exact_beta_law(self):
        # under H0, x'Px / x'x ~ Beta(d_r/2, (n - d_r)/2) whatever the scale
        n, d_r = 100, 2
        design = stream(12).standard_normal((n, d_r))
        x = 3.0 * stream(13).standard_normal((20000, n))
        t = theory.glrt_unknown_scale(x, design)
        beta = stats.beta(d_r / 2, (n - d_r) / 2)
        assert stats.kstest(t, lambda v: beta.cdf(1 - np.exp(-v / n))).pvalue > 0.01

    def test_matches_known_scale_glrt(self):
        assert theory.check_unknown_scale(trials=20000, seed=3).pvalue > 0.01

    def test_needs_large_n(self):
        with pytest.raises(ValueError):
            theory.check_unknown_scale(n=50)
