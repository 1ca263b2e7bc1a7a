"""Closed-form and plug-in detector statistics.

All statistics accept a batch of observations along leading axes and return
one scalar per observation. Quadratic forms go through Cholesky factors; no
covariance is ever inverted explicitly.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

DEFAULT_LAMBDA_GRID = np.linspace(0.0, 0.3, 10)


def lrt(x, dist0, dist1):
    """``2 log(p1(x) / p0(x))`` for two frozen distributions with ``logpdf``."""
    logp0 = np.asarray(dist0.logpdf(x), dtype=float)
    logp1 = np.asarray(dist1.logpdf(x), dtype=float)
    if np.any(np.isneginf(logp0)):
        raise ValueError("null density is zero at x; likelihood ratio undefined")
    if np.any(np.isneginf(logp1)):
        raise ValueError("alternative density is zero at x; likelihood ratio undefined")
    return 2.0 * (logp1 - logp0)


def glrt_dc(x):
    """Gaussian GLRT for a constant target with unknown amplitude and scale.

    ``T = (sum x)^2 / (sum x^2)``; invariant to rescaling ``x``.
    """
    x = np.asarray(x, dtype=float)
    energy = np.sum(x * x, axis=-1)
    if np.any(energy == 0):
        raise ValueError("glrt_dc is undefined for an all-zero observation")
    return np.sum(x, axis=-1) ** 2 / energy


def _whitened_design(spec, z_n):
    cov = spec.covariance(z_n)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"noise covariance at z_n={z_n} is not positive definite") from exc
    return chol, solve_triangular(chol, spec.design, lower=True)


def _projections(x, spec, z_n):
    """Return ``u = H^T Sigma^-1 x`` with shape ``(..., d_r)`` and ``F = H^T Sigma^-1 H``."""
    x = np.asarray(x, dtype=float)
    chol, a = _whitened_design(spec, z_n)
    flat = x.reshape(-1, spec.n)
    b = solve_triangular(chol, flat.T, lower=True)
    u = (a.T @ b).T.reshape(x.shape[:-1] + (spec.d_r,))
    return u, a.T @ a


def _quad(u, mat):
    try:
        cf = cho_factor(mat, lower=True)
    except LinAlgError as exc:
        raise ValueError("H^T Sigma^-1 H is rank deficient") from exc
    flat = u.reshape(-1, u.shape[-1])
    q = np.sum(flat * cho_solve(cf, flat.T).T, axis=1)
    return q.reshape(u.shape[:-1])


def glrt_linear(x, spec, z_n):
    """GLRT for the linear Gaussian model with known covariance.

    Returns ``x^T S^-1 H (H^T S^-1 H)^-1 H^T S^-1 x``.
    """
    u, fisher = _projections(x, spec, z_n)
    return _quad(u, fisher)


def c_term(spec, z_n):
    """``log(det Sigma / det(Sigma + s2 H H^T))`` for prior variance ``s2``.

    Uses ``det(Sigma + s2 H H^T) = det(Sigma) det(I + s2 H^T Sigma^-1 H)``,
    so only a ``d_r x d_r`` Cholesky log-determinant is needed.
    """
    s2 = spec.signal_prior_var
    if s2 == 0:
        return 0.0
    _, a = _whitened_design(spec, z_n)
    m = np.eye(spec.d_r) + s2 * (a.T @ a)
    return -2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(m)))))


def pbl(x, spec, z_n):
    """LRT with a Gaussian prior ``N(0, s2 I)`` on the signal and known nuisance."""
    s2 = spec.signal_prior_var
    if not s2 > 0:
        raise ValueError("pbl needs a positive signal prior variance")
    u, fisher = _projections(x, spec, z_n)
    return _quad(u, fisher + np.eye(spec.d_r) / s2) + c_term(spec, z_n)


# ---------------------------------------------------------------------------
# adaptive detectors


@dataclass
class ShrinkageEstimate:
    sample_cov: np.ndarray
    loading: float = 0.0

    def __post_init__(self):
        if self.loading < 0:
            raise ValueError(f"diagonal loading must be non-negative, got {self.loading}")

    @property
    def regularized(self):
        n = self.sample_cov.shape[-1]
        return self.sample_cov + self.loading * np.eye(n)


def sample_covariance(secondary):
    """Mean of outer products ``w_i w_i^T`` (normalized by the sample count)."""
    w = np.asarray(secondary, dtype=float)
    return np.einsum("...ki,...kj->...ij", w, w) / w.shape[-2]


def _cholesky(mat, what):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{what} is singular; use diagonal loading") from exc


def _adaptive_forms(x, secondary, s, loading):
    """Return ``(s'R^-1 x, s'R^-1 s, x'R^-1 x)`` with ``R`` the loaded sample covariance."""
    x = np.asarray(x, dtype=float)
    secondary = np.asarray(secondary, dtype=float)
    s = np.asarray(s, dtype=float)
    n = x.shape[-1]
    if loading == 0 and secondary.shape[-2] < n:
        raise ValueError(
            f"sample covariance from {secondary.shape[-2]} < n={n} secondary samples is singular"
        )
    est = ShrinkageEstimate(sample_covariance(secondary), loading)
    chol = _cholesky(est.regularized, "sample covariance")
    rhs = np.stack(np.broadcast_arrays(s, x), axis=-1)
    # batched triangular systems: (..., n, n) against (..., n, 2)
    w = np.linalg.solve(chol, rhs)
    ws, wx = w[..., 0], w[..., 1]
    return np.sum(ws * wx, axis=-1), np.sum(ws * ws, axis=-1), np.sum(wx * wx, axis=-1)


def amf(x, secondary, s):
    """Adaptive matched filter ``(s'S^-1 x)^2 / (s'S^-1 s)`` with sample covariance ``S``."""
    f1, f2, _ = _adaptive_forms(x, secondary, s, 0.0)
    return f1 * f1 / f2


def kelly(x, secondary, s):
    """Kelly's statistic ``(s'S^-1 x)^2 / ((s'S^-1 s)(1 + x'S^-1 x))``."""
    f1, f2, f3 = _adaptive_forms(x, secondary, s, 0.0)
    return f1 * f1 / (f2 * (1.0 + f3))


def lamf(x, secondary, s, loading):
    """AMF with the diagonally loaded covariance ``S + loading * I``."""
    if not loading > 0:
        raise ValueError("lamf needs a positive loading; use amf for loading 0")
    f1, f2, _ = _adaptive_forms(x, secondary, s, loading)
    return f1 * f1 / f2


def lamf_features(x, secondary, s, lambda_grid=DEFAULT_LAMBDA_GRID):
    """Stack ``(f1, f2, f3)`` for every loading in ``lambda_grid``.

    Output has ``3 * len(lambda_grid)`` features ordered
    ``[f1(l0), f2(l0), f3(l0), f1(l1), ...]``.
    """
    grid = np.atleast_1d(np.asarray(lambda_grid, dtype=float))
    if np.any(grid < 0):
        raise ValueError("loadings must be non-negative")
    feats = [np.stack(_adaptive_forms(x, secondary, s, lam), axis=-1) for lam in grid]
    return np.concatenate(feats, axis=-1)


def dc_features(x):
    """``(mean, variance, median, median absolute deviation)`` along the last axis.

    Variance divides by ``n``; the MAD is unscaled.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise ValueError("dc_features needs at least two samples")
    med = np.median(x, axis=-1)
    mad = np.median(np.abs(x - med[..., None]), axis=-1)
    return np.stack([x.mean(axis=-1), x.var(axis=-1), med, mad], axis=-1)
