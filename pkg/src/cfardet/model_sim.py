"""Synthetic observation models for composite hypothesis testing.

Every model exposes the same small surface used by training and evaluation:

* ``sample_params(label, rng)`` draws a parameter point from the fake prior,
* ``null_point(nuisance)`` / ``alt_point(nuisance, rng)`` pin the nuisance,
* ``simulate(point, m, rng)`` returns ``m`` i.i.d. observations.

Replicates are generated by one sequential fill of a per-point stream with a
fixed number of variates per replicate, so asking for more replicates never
changes the earlier ones.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .rng import stream

GAUSSIAN = "gaussian"
CONTAMINATED = "contaminated"


@dataclass
class ParamPoint:
    """Unknown-parameter value ``z`` together with its hypothesis label.

    ``values`` layout is model specific:

    * DC model: ``[A, sigma]``
    * adaptive model: ``[A, *Sigma.ravel()]``
    * material model: ``[material_index]``
    """

    label: int
    values: np.ndarray
    domain_tag: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))
        expected = f"Z{self.label}"
        if not self.domain_tag:
            self.domain_tag = expected
        elif self.domain_tag != expected:
            raise ValueError(f"domain tag {self.domain_tag} does not match label {self.label}")


@dataclass
class ObservationBatch:
    """``N`` parameter points with ``M`` replicates each.

    ``x`` has shape ``(N, M, *obs_shape)``.
    """

    points: list
    x: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim < 3 or self.x.shape[0] != len(self.points):
            raise ValueError(
                f"x must have shape (N, M, ...) with N={len(self.points)}, got {self.x.shape}"
            )

    @property
    def labels(self):
        return np.array([p.label for p in self.points], dtype=int)

    @property
    def replicates(self):
        return self.x.shape[1]

    @property
    def obs_shape(self):
        return self.x.shape[2:]


# ---------------------------------------------------------------------------
# primitive samplers


def _dc_noise(rng, shape, noise, eps, var_out):
    if noise == GAUSSIAN:
        return rng.standard_normal(shape)
    if noise != CONTAMINATED:
        raise ValueError(f"unknown noise kind {noise!r}")
    # one normal for the value and one for the Bernoulli(eps) component choice
    raw = rng.standard_normal(shape[:-1] + (2, shape[-1]))
    z, sel = raw[..., 0, :], raw[..., 1, :]
    if eps <= 0.0:
        outlier = np.zeros(z.shape, dtype=bool)
    elif eps >= 1.0:
        outlier = np.ones(z.shape, dtype=bool)
    else:
        outlier = sel < ndtri(eps)
    return np.where(outlier, math.sqrt(var_out), 1.0) * z


def _check_noise(noise, eps, var_out):
    if noise not in (GAUSSIAN, CONTAMINATED):
        raise ValueError(f"unknown noise kind {noise!r}")
    if noise == CONTAMINATED:
        if not 0.0 <= eps <= 1.0:
            raise ValueError(f"contamination eps must lie in [0, 1], got {eps}")
        if var_out <= 0:
            raise ValueError(f"outlier variance must be positive, got {var_out}")


def sample_dc(point, n, noise=GAUSSIAN, eps=0.1, var_out=100.0, seed=0, size=None, rng=None):
    """Draw ``x = A*1 + sigma*noise`` for ``point.values == [A, sigma]``.

    ``sigma == 0`` is accepted and returns the noiseless target.
    """
    amp, sigma = np.asarray(getattr(point, "values", point), dtype=float)[:2]
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    _check_noise(noise, eps, var_out)
    if rng is None:
        rng = stream(seed)
    shape = (n,) if size is None else (size, n)
    return amp + sigma * _dc_noise(rng, shape, noise, eps, var_out)


@dataclass
class LinearGaussianSpec:
    """``x = H z_r + noise`` with ``noise ~ N(0, Sigma(z_n))``."""

    design: np.ndarray
    noise_cov_fn: object
    signal_prior_var: float = 1.0

    def __post_init__(self):
        design = np.asarray(self.design, dtype=float)
        self.design = design.reshape(-1, 1) if design.ndim == 1 else design
        if np.linalg.matrix_rank(self.design) != self.design.shape[1]:
            raise ValueError(f"design matrix {self.design.shape} must have full column rank")
        if self.signal_prior_var < 0:
            raise ValueError("signal prior variance must be non-negative")

    @property
    def n(self):
        return self.design.shape[0]

    @property
    def d_r(self):
        return self.design.shape[1]

    def covariance(self, z_n):
        cov = np.asarray(self.noise_cov_fn(np.atleast_1d(np.asarray(z_n, dtype=float))), dtype=float)
        if cov.shape != (self.n, self.n):
            raise ValueError(f"covariance must be {self.n}x{self.n}, got {cov.shape}")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise ValueError("noise covariance is not symmetric")
        return cov


def scaled_identity(n):
    """Covariance family ``Sigma(z_n) = z_n[0] * I``."""
    return lambda z: float(z[0]) * np.eye(n)


def ar1_covariance(n):
    """Covariance family ``Sigma(z_n)_{ij} = z_n[0] * z_n[1]**|i-j|``."""
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return lambda z: float(z[0]) * float(z[1]) ** lag


def sample_linear_gaussian(spec, z_r, z_n, seed=0, size=None, rng=None):
    z_r = np.atleast_1d(np.asarray(z_r, dtype=float))
    if z_r.shape != (spec.d_r,):
        raise ValueError(f"z_r must have length {spec.d_r}, got {z_r.shape}")
    chol = np.linalg.cholesky(spec.covariance(z_n))
    if rng is None:
        rng = stream(seed)
    shape = (spec.n,) if size is None else (size, spec.n)
    u = rng.standard_normal(shape)
    return spec.design @ z_r + u @ chol.T


@dataclass
class AdaptiveSpec:
    """Known signature ``s`` in Gaussian noise with unknown covariance."""

    signature: np.ndarray
    covariance: np.ndarray
    secondary_count: int
    amplitude: float = 1.0

    def __post_init__(self):
        self.signature = np.asarray(self.signature, dtype=float).ravel()
        self.covariance = np.asarray(self.covariance, dtype=float)
        n = self.signature.size
        if self.covariance.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n}, got {self.covariance.shape}")
        if self.secondary_count < n:
            raise ValueError(
                f"need at least n={n} secondary samples for an invertible sample covariance, "
                f"got {self.secondary_count}"
            )
        self.chol = np.linalg.cholesky(self.covariance)


def sample_adaptive(spec, label, seed=0, size=None, rng=None):
    """Return ``(primary, secondary)``.

    ``primary`` has shape ``(n,)`` and ``secondary`` ``(n_sec, n)``; with
    ``size`` both gain a leading replicate axis.
    """
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    if rng is None:
        rng = stream(seed)
    n = spec.signature.size
    lead = () if size is None else (size,)
    w = rng.standard_normal(lead + (1 + spec.secondary_count, n)) @ spec.chol.T
    primary = w[..., 0, :] + (spec.amplitude * label) * spec.signature
    return primary, w[..., 1:, :]


def sample_material_model(materials, target, amplitude, label, material_index, seed=0, size=None, rng=None):
    """Draw ``v + amplitude * target * label`` with ``v`` from one material."""
    if not 0 <= material_index < len(materials):
        raise IndexError(f"material index {material_index} out of range for {len(materials)} materials")
    if amplitude < 0:
        raise ValueError("target amplitude must be non-negative")
    mean, cov = materials[material_index]
    mean = np.asarray(mean, dtype=float)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    if rng is None:
        rng = stream(seed)
    shape = mean.shape if size is None else (size,) + mean.shape
    v = mean + rng.standard_normal(shape) @ chol.T
    return v + (amplitude * label) * np.asarray(target, dtype=float)


# ---------------------------------------------------------------------------
# models used by training and evaluation


class DCModel:
    """Constant target with unknown amplitude and unknown noise scale."""

    name = "dc"
    param_names = ("A", "sigma")

    def __init__(self, n=16, noise=GAUSSIAN, eps=0.1, var_out=100.0,
                 sigma_range=(0.5, 1.0), amp_range=(-1.0, 1.0)):
        _check_noise(noise, eps, var_out)
        if not 0 < sigma_range[0] <= sigma_range[1]:
            raise ValueError(f"bad sigma range {sigma_range}")
        self.n = int(n)
        self.noise = noise
        self.eps = float(eps)
        self.var_out = float(var_out)
        self.sigma_range = tuple(float(v) for v in sigma_range)
        self.amp_range = tuple(float(v) for v in amp_range)

    @property
    def obs_shape(self):
        return (self.n,)

    @property
    def default_nuisances(self):
        return list(self.sigma_range)

    def check_point(self, point):
        amp, sigma = point.values
        lo, hi = self.sigma_range
        if not lo <= sigma <= hi:
            raise ValueError(f"sigma={sigma} outside [{lo}, {hi}]")
        if (point.label == 0) != (amp == 0.0):
            raise ValueError(f"A={amp} inconsistent with label {point.label}")
        if point.label == 1 and not self.amp_range[0] <= amp <= self.amp_range[1]:
            raise ValueError(f"A={amp} outside {self.amp_range}")

    def sample_params(self, label, rng):
        return self.alt_point(rng.uniform(*self.sigma_range), rng) if label else \
            self.null_point(rng.uniform(*self.sigma_range))

    def null_point(self, nuisance):
        return ParamPoint(0, [0.0, float(nuisance)])

    def alt_point(self, nuisance, rng):
        amp = 0.0
        while amp == 0.0:
            amp = rng.uniform(*self.amp_range)
        return ParamPoint(1, [amp, float(nuisance)])

    def nuisance_id(self, nuisance):
        return f"sigma={float(nuisance):g}"

    def simulate(self, point, m, rng):
        amp, sigma = point.values
        return amp + sigma * _dc_noise(rng, (m, self.n), self.noise, self.eps, self.var_out)


def covariance_with_condition(n, cond, seed=0):
    """Covariance with eigenvalues geometrically spaced in ``[1/cond, 1]``.

    ``cond == 1`` returns the identity; otherwise the eigenbasis is a
    Haar-random rotation fixed by ``seed``.
    """
    if cond < 1:
        raise ValueError(f"condition number must be >= 1, got {cond}")
    if cond == 1:
        return np.eye(n)
    eig = np.geomspace(1.0, 1.0 / cond, n)
    q = _haar_rotation(n, stream(seed, "rotation"))
    cov = (q * eig) @ q.T
    return 0.5 * (cov + cov.T)


def _haar_rotation(n, rng):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class AdaptiveModel:
    """Known signature with unknown amplitude, unknown covariance and secondary data.

    Observations have shape ``(1 + n_sec, n)``: row 0 is the primary vector,
    the remaining rows are noise-only secondary samples.
    """

    name = "adaptive"

    def __init__(self, n=8, n_sec=None, signature=None, amp_range=(-1.0, 1.0),
                 cond_max=100.0, scale_range=(0.5, 2.0)):
        self.n = int(n)
        self.n_sec = self.n if n_sec is None else int(n_sec)
        if self.n_sec < self.n:
            raise ValueError(f"secondary_count={self.n_sec} must be >= n={self.n}")
        if signature is None:
            signature = np.ones(self.n) / math.sqrt(self.n)
        self.signature = np.asarray(signature, dtype=float).ravel()
        if self.signature.size != self.n:
            raise ValueError("signature length must equal n")
        self.amp_range = tuple(float(v) for v in amp_range)
        self.cond_max = float(cond_max)
        self.scale_range = tuple(float(v) for v in scale_range)

    @property
    def obs_shape(self):
        return (1 + self.n_sec, self.n)

    @property
    def default_nuisances(self):
        return [covariance_with_condition(self.n, 1.0), covariance_with_condition(self.n, 50.0)]

    def _random_covariance(self, rng):
        cond = math.exp(rng.uniform(0.0, math.log(self.cond_max)))
        scale = math.exp(rng.uniform(*np.log(self.scale_range)))
        eig = scale * np.geomspace(1.0, 1.0 / cond, self.n)
        q = _haar_rotation(self.n, rng)
        cov = (q * eig) @ q.T
        return 0.5 * (cov + cov.T)

    def sample_params(self, label, rng):
        cov = self._random_covariance(rng)
        return self.alt_point(cov, rng) if label else self.null_point(cov)

    def null_point(self, nuisance):
        return ParamPoint(0, np.concatenate([[0.0], np.asarray(nuisance, dtype=float).ravel()]))

    def alt_point(self, nuisance, rng):
        amp = 0.0
        while amp == 0.0:
            amp = rng.uniform(*self.amp_range)
        return ParamPoint(1, np.concatenate([[amp], np.asarray(nuisance, dtype=float).ravel()]))

    def nuisance_id(self, nuisance):
        eig = np.linalg.eigvalsh(np.asarray(nuisance, dtype=float))
        return f"cond={eig[-1] / eig[0]:.4g}"

    def simulate(self, point, m, rng):
        amp = point.values[0]
        cov = point.values[1:].reshape(self.n, self.n)
        chol = np.linalg.cholesky(cov)
        w = rng.standard_normal((m, 1 + self.n_sec, self.n)) @ chol.T
        w[:, 0, :] += amp * self.signature
        return w


def make_synthetic_materials(count=3, n=10, seed=0, noise_scales=None):
    """Build ``count`` Gaussian materials with distinct means and covariances.

    Means are smooth random spectra in roughly ``[0.1, 0.6]``; covariances are
    a rank-2 smooth component plus a diagonal, scaled per material by
    ``noise_scales`` (default: geometric spread from 0.01 to 0.04).
    """
    rng = stream(seed, "materials")
    if noise_scales is None:
        noise_scales = np.geomspace(0.01, 0.04, count)
    bands = np.linspace(0.0, 1.0, n)
    materials = []
    for k in range(count):
        coef = rng.normal(size=3)
        mean = 0.35 + 0.1 * (coef[0] + coef[1] * bands + coef[2] * np.sin(3 * np.pi * bands))
        mean = np.clip(mean, 0.05, 0.9)
        basis = np.stack([np.ones(n), np.cos(np.pi * (k + 1) * bands)], axis=1)
        basis = basis * rng.uniform(0.5, 1.5, size=2)
        cov = noise_scales[k] ** 2 * (basis @ basis.T + 0.5 * np.eye(n))
        materials.append((mean, cov))
    return materials


def default_target(n=10):
    """Smooth positive target spectrum used by the material experiment."""
    bands = np.linspace(0.0, 1.0, n)
    return 0.2 + 0.6 * np.exp(-((bands - 0.7) ** 2) / 0.05)


class MaterialModel:
    """Additive target planted on pixels of a finite set of Gaussian materials."""

    name = "material"

    def __init__(self, materials, target, amplitude=0.05):
        if len(materials) < 1:
            raise ValueError("need at least one material")
        self.means = [np.asarray(m, dtype=float) for m, _ in materials]
        self.covs = [np.asarray(c, dtype=float) for _, c in materials]
        self.chols = [np.linalg.cholesky(c) for c in self.covs]
        self.target = np.asarray(target, dtype=float)
        if amplitude < 0:
            raise ValueError("target amplitude must be non-negative")
        self.amplitude = float(amplitude)
        self.n = self.target.size

    @property
    def materials(self):
        return list(zip(self.means, self.covs))

    @property
    def obs_shape(self):
        return (self.n,)

    @property
    def default_nuisances(self):
        return list(range(len(self.means)))

    def sample_params(self, label, rng):
        k = int(rng.integers(len(self.means)))
        return ParamPoint(label, [k])

    def null_point(self, nuisance):
        return ParamPoint(0, [int(nuisance)])

    def alt_point(self, nuisance, rng):
        return ParamPoint(1, [int(nuisance)])

    def nuisance_id(self, nuisance):
        return f"material={int(nuisance)}"

    def simulate(self, point, m, rng):
        k = int(point.values[0])
        if not 0 <= k < len(self.means):
            raise IndexError(f"material index {k} out of range")
        v = self.means[k] + rng.standard_normal((m, self.n)) @ self.chols[k].T
        return v + (self.amplitude * point.label) * self.target


# ---------------------------------------------------------------------------
# batches


def generate_batch(model, points, replicates, seed, *key):
    """Simulate ``replicates`` draws for each point; point ``i`` uses stream ``(seed, *key, i)``."""
    x = np.stack([model.simulate(p, replicates, stream(seed, *key, i)) for i, p in enumerate(points)])
    return ObservationBatch(list(points), x)


def save_batch_csv(batch, path):
    """Write one row per (point, replicate): ``point_id, replicate_id, label, z..., x...``."""
    obs_shape = batch.obs_shape
    z_dim = batch.points[0].values.size if batch.points else 0
    if len(obs_shape) == 1:
        x_names = [f"x{i}" for i in range(obs_shape[0])]
    else:
        x_names = [f"x{i}_{j}" for i in range(obs_shape[0]) for j in range(obs_shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point_id", "replicate_id", "label"] + [f"z{i}" for i in range(z_dim)] + x_names)
        for i, point in enumerate(batch.points):
            z = [repr(float(v)) for v in point.values]
            for j in range(batch.replicates):
                xs = [repr(float(v)) for v in batch.x[i, j].ravel()]
                writer.writerow([i, j, point.label] + z + xs)


def load_batch_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    z_cols = [k for k, h in enumerate(header) if h.startswith("z")]
    x_cols = [k for k, h in enumerate(header) if h.startswith("x")]
    last = header[x_cols[-1]][1:]
    obs_shape = tuple(int(v) + 1 for v in last.split("_"))
    n_points = 1 + max(int(r[0]) for r in rows)
    n_reps = 1 + max(int(r[1]) for r in rows)
    x = np.empty((n_points, n_reps) + obs_shape)
    points = [None] * n_points
    for r in rows:
        i, j = int(r[0]), int(r[1])
        x[i, j] = np.array([float(r[k]) for k in x_cols]).reshape(obs_shape)
        if points[i] is None:
            points[i] = ParamPoint(int(r[2]), [float(r[k]) for k in z_cols])
    return ObservationBatch(points, x)
