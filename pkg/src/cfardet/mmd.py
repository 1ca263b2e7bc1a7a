"""Maximum mean discrepancy between scalar samples and the CFAR penalty.

Kernel convention: ``k(a, b) = exp(-(a - b)^2 / (2 h^2))``.
"""

from dataclasses import dataclass

import numpy as np

MEDIAN = "median"
ALL_PAIRS = "all-pairs"
RING = "ring"
BIASED = "biased"
UNBIASED = "unbiased"

_MEDIAN_MAX_POINTS = 2048


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel; ``bandwidth`` is a positive float or ``"median"``."""

    bandwidth: object = MEDIAN

    def __post_init__(self):
        if self.bandwidth != MEDIAN and not float(self.bandwidth) > 0:
            raise ValueError(f"bandwidth must be positive or 'median', got {self.bandwidth!r}")

    def resolve(self, pooled):
        if self.bandwidth == MEDIAN:
            return median_bandwidth(pooled)
        return float(self.bandwidth)


@dataclass(frozen=True)
class PenaltyConfig:
    weight: float = 1.0
    pairing: str = ALL_PAIRS
    estimator: str = BIASED

    def __post_init__(self):
        if self.estimator not in (BIASED, UNBIASED):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ValueError(f"penalty weight must be finite and >= 0, got {self.weight}")
        if self.pairing not in (ALL_PAIRS, RING):
            raise ValueError(f"unknown pairing {self.pairing!r}")


def rbf(a, b, h):
    d = np.subtract.outer(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    z = d / h
    return np.exp(-0.5 * z * z)


def median_bandwidth(pooled):
    """Median pairwise absolute difference; 1.0 when it is zero or subnormal."""
    v = np.asarray(pooled, dtype=float).ravel()
    if v.size < 2:
        return 1.0
    if v.size > _MEDIAN_MAX_POINTS:
        # evenly strided order statistics keep the cost quadratic in a fixed size
        v = np.sort(v)[:: -(-v.size // _MEDIAN_MAX_POINTS)]
    iu = np.triu_indices(v.size, k=1)
    diffs = np.abs(v[:, None] - v[None, :])[iu]
    med = float(np.median(diffs))
    return med if med >= np.finfo(float).tiny else 1.0


def _as_samples(xs, minimum):
    xs = np.asarray(xs, dtype=float).ravel()
    if xs.size < minimum:
        raise ValueError(f"need at least {minimum} samples, got {xs.size}")
    return xs


def _bandwidth(kernel, x, y):
    kernel = kernel if isinstance(kernel, KernelSpec) else KernelSpec(kernel)
    return kernel.resolve(np.concatenate([x, y]))


def mmd_biased(samples_x, samples_y, kernel=KernelSpec()):
    """V-statistic estimate of ``E k(X,X') + E k(Y,Y') - 2 E k(X,Y)``."""
    x = _as_samples(samples_x, 1)
    y = _as_samples(samples_y, 1)
    h = _bandwidth(kernel, x, y)
    val = rbf(x, x, h).mean() + rbf(y, y, h).mean() - 2.0 * rbf(x, y, h).mean()
    return max(float(val), 0.0)


def mmd_unbiased(samples_x, samples_y, kernel=KernelSpec()):
    """U-statistic estimate (within-sample diagonals removed); may be negative."""
    x = _as_samples(samples_x, 2)
    y = _as_samples(samples_y, 2)
    h = _bandwidth(kernel, x, y)
    m, n = x.size, y.size
    kxx = (rbf(x, x, h).sum() - m) / (m * (m - 1))
    kyy = (rbf(y, y, h).sum() - n) / (n * (n - 1))
    return float(kxx + kyy - 2.0 * rbf(x, y, h).mean())


def _pairs(count, pairing):
    if pairing == ALL_PAIRS:
        return [(i, j) for i in range(count) for j in range(i + 1, count)]
    if pairing == RING:
        return sorted({tuple(sorted((i, (i + 1) % count))) for i in range(count)})
    raise ValueError(f"unknown pairing {pairing!r}")


def penalty_weights(count, pairing=ALL_PAIRS):
    """Point-level matrix ``C`` with ``penalty = sum_ij C_ij * mean(K_block_ij)``."""
    c = np.zeros((count, count))
    for i, j in _pairs(count, pairing):
        c[i, i] += 1.0
        c[j, j] += 1.0
        c[i, j] -= 1.0
        c[j, i] -= 1.0
    return c


def cfar_penalty(scores, kernel=KernelSpec(), pairing=ALL_PAIRS, grad=False, estimator=BIASED):
    """Sum of MMDs between the score samples of pairs of null points.

    ``scores`` is a sequence of 1-D arrays, one per null-hypothesis point.
    The bandwidth (when ``"median"``) is computed from the pooled scores and
    treated as a constant. ``estimator="unbiased"`` drops the within-point
    diagonals (U-statistic); the value is then not clamped and may be
    negative. With ``grad=True`` returns
    ``(value, [d value / d scores_i], bandwidth)``.
    """
    groups = [np.asarray(s, dtype=float).ravel() for s in scores]
    if len(groups) < 2:
        raise ValueError("cfar_penalty needs at least two null-hypothesis points")
    if any(g.size < 1 for g in groups):
        raise ValueError("every null point needs at least one score")
    pooled = np.concatenate(groups)
    kernel = kernel if isinstance(kernel, KernelSpec) else KernelSpec(kernel)
    h = kernel.resolve(pooled)

    if estimator not in (BIASED, UNBIASED):
        raise ValueError(f"unknown estimator {estimator!r}")
    sizes = np.array([g.size for g in groups])
    owner = np.repeat(np.arange(len(groups)), sizes)
    c = penalty_weights(len(groups), pairing)
    w = c[np.ix_(owner, owner)] / np.outer(sizes[owner], sizes[owner])
    if estimator == UNBIASED:
        if sizes.min() < 2:
            raise ValueError("the unbiased penalty needs at least 2 scores per point")
        m = sizes[owner][:, None].astype(float)
        w = np.where(owner[:, None] == owner[None, :], w * m / (m - 1.0), w)
        np.fill_diagonal(w, 0.0)
    k = rbf(pooled, pooled, h)
    value = float(np.sum(w * k))
    if not grad:
        return max(value, 0.0) if estimator == BIASED else value
    # d/ds_a sum_ab W_ab k(s_a, s_b) = 2 sum_b W_ab k_ab * (s_b - s_a) / h^2
    diff = pooled[None, :] - pooled[:, None]
    g = 2.0 * np.sum(w * k * diff, axis=1) / (h * h)
    return value, np.split(g, np.cumsum(sizes)[:-1]), h
