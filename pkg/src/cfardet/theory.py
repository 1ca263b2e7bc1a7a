"""Numerical checks of the GLRT / Bayes-CFAR results for linear Gaussian models."""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats
from scipy.linalg import cho_factor, cho_solve

from . import detectors
from .evaluation import chi2_sf
from .model_sim import LinearGaussianSpec, sample_linear_gaussian, scaled_identity
from .rng import stream

SIGMA_SWEEP = (1.0, 1e2, 1e4, 1e6, 1e8)


# ---------------------------------------------------------------------------
# noncentral chi-squared


def noncentral_chi2_cdf(x, dof, noncentrality, tail=1e-10):
    """Poisson mixture of central chi-squared CDFs, truncated once the
    remaining Poisson mass drops below ``tail``."""
    x = np.asarray(x, dtype=float)
    half = noncentrality / 2.0
    if half == 0:
        return special.gammainc(dof / 2.0, x / 2.0)
    total = np.zeros_like(x)
    mass = 0.0
    j = 0
    while True:
        weight = math.exp(-half + j * math.log(half) - math.lgamma(j + 1))
        total += weight * special.gammainc(dof / 2.0 + j, x / 2.0)
        mass += weight
        j += 1
        if j > half and 1.0 - mass < tail:
            return total


# ---------------------------------------------------------------------------
# Fisher information


@dataclass
class FisherBlocks:
    rr: np.ndarray
    rn: np.ndarray
    nn: np.ndarray

    @property
    def full(self):
        return np.block([[self.rr, self.rn], [self.rn.T, self.nn]])


def fisher_blocks(spec, z_r, z_n, step=1e-5):
    """Gaussian Fisher information for ``theta = (z_r, z_n)``.

    ``F_ij = dmu_i' S^-1 dmu_j + tr(S^-1 dS_i S^-1 dS_j) / 2``. The mean
    Jacobian in ``z_r`` is ``H``; every other derivative is a central
    difference of step ``step``, so the cross block is computed, not assumed.
    """
    z_r = np.atleast_1d(np.asarray(z_r, dtype=float))
    z_n = np.atleast_1d(np.asarray(z_n, dtype=float))
    cov = spec.covariance(z_n)
    cf = cho_factor(cov, lower=True)
    d_r, d_n = z_r.size, z_n.size

    def mean(zr, zn):
        return spec.design @ zr

    def covariance(zr, zn):
        c = spec.covariance(zn)
        try:
            np.linalg.cholesky(c)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"covariance not positive definite at z_n={zn}") from exc
        return c

    dmu, dcov = [], []
    for k in range(d_r):
        e = np.zeros(d_r)
        e[k] = step
        dmu.append(spec.design[:, k])
        dcov.append((covariance(z_r + e, z_n) - covariance(z_r - e, z_n)) / (2 * step))
    for k in range(d_n):
        e = np.zeros(d_n)
        e[k] = step
        dmu.append((mean(z_r, z_n + e) - mean(z_r, z_n - e)) / (2 * step))
        dcov.append((covariance(z_r, z_n + e) - covariance(z_r, z_n - e)) / (2 * step))

    whitened_mu = [cho_solve(cf, d) for d in dmu]
    whitened_cov = [cho_solve(cf, d) for d in dcov]
    size = d_r + d_n
    f = np.empty((size, size))
    for i in range(size):
        for j in range(i, size):
            f[i, j] = f[j, i] = dmu[i] @ whitened_mu[j] + 0.5 * np.sum(whitened_cov[i] * whitened_cov[j].T)
    return FisherBlocks(f[:d_r, :d_r], f[:d_r, d_r:], f[d_r:, d_r:])


def noncentrality(spec, z_r, z_n):
    """``lambda = z_r' H' S^-1 H z_r``."""
    z_r = np.atleast_1d(np.asarray(z_r, dtype=float))
    return float(z_r @ fisher_blocks(spec, z_r, z_n).rr @ z_r)


# ---------------------------------------------------------------------------
# identity between the partially Bayesian LRT and the GLRT


def pbl_unreduced(x, spec, z_n):
    """Direct density-ratio form ``x'(S^-1 - (S + s2 HH')^-1)x + log det S / det(S + s2 HH')``."""
    cov = spec.covariance(z_n)
    big = cov + spec.signal_prior_var * spec.design @ spec.design.T
    m = np.linalg.inv(cov) - np.linalg.inv(big)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    quad = np.einsum("ti,ij,tj->t", x, m, x)
    return quad + np.linalg.slogdet(cov)[1] - np.linalg.slogdet(big)[1]


def check_pbl_glrt_identity(spec, z_n, sweep=SIGMA_SWEEP, trials=100, seed=0, exact_var=1.0):
    """Max ``|pbl - glrt - c|`` per prior variance, plus the residual of the
    reduced against the unreduced PBL at prior variance ``exact_var``.

    The unreduced form subtracts two nearly equal inverses, so it is only
    evaluated at a moderate prior variance.
    """
    rng = stream(seed, "identity")
    x = rng.standard_normal((trials, spec.d_r)) @ spec.design.T + sample_linear_gaussian(
        spec, np.zeros(spec.d_r), z_n, size=trials, rng=rng)
    glrt = detectors.glrt_linear(x, spec, z_n)
    residuals = {}
    for s2 in sweep:
        sub = dataclasses.replace(spec, signal_prior_var=float(s2))
        residuals[float(s2)] = float(np.max(np.abs(detectors.pbl(x, sub, z_n) - glrt - detectors.c_term(sub, z_n))))
    sub = dataclasses.replace(spec, signal_prior_var=float(exact_var))
    exact = float(np.max(np.abs(detectors.pbl(x, sub, z_n) - pbl_unreduced(x, sub, z_n))))
    return residuals, exact


# ---------------------------------------------------------------------------
# asymptotic distribution of the GLRT


@dataclass
class AsymptoticsReport:
    ks_stat: float
    ks_pvalue: float
    h1_mean: float
    h1_expected_mean: float
    h1_mean_se: float
    noncentrality: float
    quantile_levels: np.ndarray
    quantile_cdf_errors: np.ndarray
    quantile_tolerance: np.ndarray

    @property
    def mean_z(self):
        return abs(self.h1_mean - self.h1_expected_mean) / self.h1_mean_se

    @property
    def quantiles_ok(self):
        return bool(np.all(np.abs(self.quantile_cdf_errors) <= self.quantile_tolerance))


def check_asymptotics(spec, z_r, z_n, trials=100_000, seed=0):
    """Compare GLRT samples to central (null) and noncentral (alternative) chi-squared laws."""
    z_n = np.atleast_1d(np.asarray(z_n, dtype=float))
    if spec.n < 10 * max(spec.d_r, z_n.size):
        raise ValueError(f"n={spec.n} too small; need n >= 10 * max(d_r, d_n)")
    z_r = np.atleast_1d(np.asarray(z_r, dtype=float))
    x0 = sample_linear_gaussian(spec, np.zeros(spec.d_r), z_n, size=trials, rng=stream(seed, "asym", 0))
    x1 = sample_linear_gaussian(spec, z_r, z_n, size=trials, rng=stream(seed, "asym", 1))
    t0 = detectors.glrt_linear(x0, spec, z_n)
    t1 = detectors.glrt_linear(x1, spec, z_n)
    ks = stats.kstest(t0, lambda v: 1.0 - chi2_sf(v, spec.d_r))
    lam = noncentrality(spec, z_r, z_n)
    levels = np.linspace(0.1, 0.9, 9)
    q = np.quantile(t1, levels)
    errors = noncentral_chi2_cdf(q, spec.d_r, lam) - levels
    return AsymptoticsReport(
        ks_stat=float(ks.statistic), ks_pvalue=float(ks.pvalue),
        h1_mean=float(t1.mean()), h1_expected_mean=spec.d_r + lam,
        h1_mean_se=float(t1.std(ddof=1) / math.sqrt(trials)), noncentrality=lam,
        quantile_levels=levels, quantile_cdf_errors=errors,
        quantile_tolerance=4.0 * np.sqrt(levels * (1 - levels) / trials),
    )


# ---------------------------------------------------------------------------
# Bayes risk under fake priors


@dataclass
class BayesRisk:
    risk: np.ndarray
    fpr: np.ndarray
    fnr: np.ndarray
    p0: float


def _risk_from_scores(scores0, scores1, gammas, p0):
    gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
    fpr = np.stack([np.mean(s[:, None] >= gammas, axis=0) for s in scores0])
    fnr = np.stack([np.mean(s[:, None] < gammas, axis=0) for s in scores1])
    risk = p0 * fpr.mean(axis=0) + (1.0 - p0) * fnr.mean(axis=0)
    return BayesRisk(risk, fpr, fnr, p0)


def simulate_prior_scores(detector, spec, nuisances, trials, seed):
    """Scores under the fake priors: ``z_r ~ N(0, s2 I)`` under H1, fixed grid of nuisances."""
    scores0, scores1 = [], []
    for k, z_n in enumerate(nuisances):
        x0 = sample_linear_gaussian(spec, np.zeros(spec.d_r), z_n, size=trials, rng=stream(seed, "risk", k, 0))
        rng = stream(seed, "risk", k, 1)
        signal = math.sqrt(spec.signal_prior_var) * rng.standard_normal((trials, spec.d_r)) @ spec.design.T
        x1 = signal + sample_linear_gaussian(spec, np.zeros(spec.d_r), z_n, size=trials, rng=rng)
        scores0.append(np.asarray(detector(x0, z_n), dtype=float))
        scores1.append(np.asarray(detector(x1, z_n), dtype=float))
    return scores0, scores1


def bayes_risk(detector, gamma, spec, nuisances, p0=0.5, trials=10_000, seed=0):
    """Monte Carlo 0-1 risk ``P(1{T >= gamma} != y)`` with per-nuisance FPR / FNR."""
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("prior probability must lie in [0, 1]")
    s0, s1 = simulate_prior_scores(detector, spec, nuisances, trials, seed)
    return _risk_from_scores(s0, s1, gamma, p0)


def wrong_covariance_glrt(wrong_cov):
    """GLRT built with a mismatched covariance, normalized to be chi-squared under H0.

    With ``u = H' W^-1 x`` and ``C = H' W^-1 S W^-1 H`` the statistic
    ``u' C^-1 u`` has a ``chi2_{d_r}`` null law for every true ``S``.
    """
    wrong_cov = np.asarray(wrong_cov, dtype=float)

    def detector(x, z_n, spec):
        cov = spec.covariance(z_n)
        g = np.linalg.solve(wrong_cov, spec.design)
        u = np.asarray(x) @ g
        c = g.T @ cov @ g
        return np.sum(u * np.linalg.solve(c, u.T).T, axis=-1)

    return detector


def energy_detector(x, z_n, spec):
    """``x' S^-1 x``; chi-squared with ``n`` degrees of freedom under H0."""
    chol = np.linalg.cholesky(spec.covariance(z_n))
    w = np.linalg.solve(chol, np.asarray(x).T)
    return np.sum(w * w, axis=0)


def check_glrt_bayes_optimal(spec, nuisances, trials=20_000, seed=0, p0=0.5, grid=400):
    """Best-threshold Bayes risk of the GLRT versus CFAR comparison detectors.

    Returns ``{name: (risk, se_of_difference_to_glrt)}``; the GLRT entry has
    ``se == 0``.
    """
    rng = stream(seed, "wrong-cov")
    a = rng.standard_normal((spec.n, spec.n))
    wrong = a @ a.T / spec.n + np.eye(spec.n)
    library = {
        "glrt": lambda x, z_n: detectors.glrt_linear(x, spec, z_n),
        "mismatched_glrt": lambda x, z_n: wrong_covariance_glrt(wrong)(x, z_n, spec),
        "energy": lambda x, z_n: energy_detector(x, z_n, spec),
    }
    out, errs = {}, {}
    for name, det in library.items():
        s0, s1 = simulate_prior_scores(det, spec, nuisances, trials, seed)
        pooled = np.concatenate(s0 + s1)
        gammas = np.quantile(pooled, np.linspace(0.0, 1.0, grid))
        r = _risk_from_scores(s0, s1, gammas, p0)
        best = int(np.argmin(r.risk))
        g = gammas[best]
        errs[name] = np.concatenate([p0 * (s >= g) for s in s0] + [(1 - p0) * (s < g) for s in s1])
        out[name] = float(r.risk[best])
    size = errs["glrt"].size
    return {name: (risk, float(np.std(2 * (errs[name] - errs["glrt"]), ddof=1) / math.sqrt(size)))
            for name, risk in out.items()}


# ---------------------------------------------------------------------------
# unknown nuisance: scale family


def glrt_unknown_scale(x, design):
    """GLRT for ``Sigma = z_n I`` with ``z_n`` estimated by maximum likelihood.

    ``n * log(x'x / x'(I - P)x)`` with ``P`` the projector onto ``range(H)``.
    """
    x = np.asarray(x, dtype=float)
    q, _ = np.linalg.qr(design)
    proj = x @ q
    energy = np.sum(x * x, axis=-1)
    return x.shape[-1] * np.log(energy / (energy - np.sum(proj * proj, axis=-1)))


def check_unknown_scale(n=100, d_r=1, scales=(0.5, 2.0), trials=20_000, seed=0):
    """KS test of the unknown-scale GLRT against the known-scale GLRT under H0."""
    if n < 100:
        raise ValueError("the unknown-nuisance check needs n >= 100")
    rng = stream(seed, "scale-design")
    design = rng.standard_normal((n, d_r))
    spec = LinearGaussianSpec(design, scaled_identity(n))
    x_unknown = sample_linear_gaussian(spec, np.zeros(d_r), [scales[0]], size=trials, rng=stream(seed, "scale", 0))
    x_known = sample_linear_gaussian(spec, np.zeros(d_r), [scales[1]], size=trials, rng=stream(seed, "scale", 1))
    t_unknown = glrt_unknown_scale(x_unknown, design)
    t_known = detectors.glrt_linear(x_known, spec, [scales[1]])
    return stats.ks_2samp(t_unknown, t_known)
