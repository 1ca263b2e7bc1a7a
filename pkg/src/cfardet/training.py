"""NET and CFARnet training loops.

Both detectors share one code path: a batch of parameter points is drawn
from the fake priors, every point gets ``replicates`` observations, and the
network minimizes the mean cross entropy plus ``alpha`` times the MMD penalty
between the score distributions of the null-hypothesis points. NET is the
``alpha == 0`` case.
"""

import csv
import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import detectors
from .mmd import ALL_PAIRS, BIASED, MEDIAN, KernelSpec, PenaltyConfig, cfar_penalty
from .model_sim import generate_batch
from .neuralnet import MlpNetwork, adam_step, bce_loss, sgd_step
from .rng import stream

DETECTOR_HEADER = "cfardet-detector"
DETECTOR_VERSION = 1
LOG_COLUMNS = ("step", "bce", "penalty", "total", "bandwidth", "wall_ms")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    fake_prior_y: float = 0.5
    points_per_batch: int = 64
    replicates: int = 32
    alpha: float = 0.0
    pairing: str = ALL_PAIRS
    estimator: str = BIASED
    bandwidth: object = MEDIAN
    hidden: tuple = (32,)
    activation: str = "tanh"
    lr: float = 0.05
    momentum: float = 0.9
    optimizer: str = "sgd"
    lr_final: float = 0.1
    steps: int = 2000
    seed: int = 0
    bce_mode: str = "all"
    resample: bool = True
    prefetch: bool = True
    record_wall_time: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        PenaltyConfig(self.alpha, self.pairing, self.estimator)
        KernelSpec(self.bandwidth)
        if not 0.0 <= self.fake_prior_y <= 1.0:
            raise ValueError("fake_prior_y must lie in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.bce_mode not in ("all", "one"):
            raise ValueError(f"bce_mode must be 'all' or 'one', got {self.bce_mode!r}")
        if self.alpha > 0:
            if self.replicates < 2:
                raise ValueError("the CFAR penalty needs at least 2 replicates per point")
            if self.points_per_batch < 2:
                raise ValueError("the CFAR penalty needs at least 2 null points per batch")
            if self.fake_prior_y >= 1.0:
                raise ValueError("fake_prior_y = 1 leaves no null points for the CFAR penalty")
        if self.steps < 0 or self.points_per_batch < 1 or self.replicates < 1:
            raise ValueError("steps, points_per_batch and replicates must be positive")

    def digest(self):
        items = sorted((k, repr(v)) for k, v in asdict(self).items() if k not in ("prefetch", "record_wall_time"))
        return hashlib.sha256(repr(items).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# feature maps


@dataclass
class FeatureMap:
    """Observation -> feature vector; ``kind`` is ``dc``, ``lamf`` or ``identity``."""

    kind: str
    signature: np.ndarray = None
    lambda_grid: np.ndarray = field(default_factory=lambda: detectors.DEFAULT_LAMBDA_GRID.copy())

    def __post_init__(self):
        if self.kind not in ("dc", "lamf", "identity"):
            raise ValueError(f"unknown feature map {self.kind!r}")
        if self.kind == "lamf" and self.signature is None:
            raise ValueError("lamf features need the target signature")
        if self.signature is not None:
            self.signature = np.asarray(self.signature, dtype=float)
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)

    def __call__(self, obs):
        obs = np.asarray(obs, dtype=float)
        if self.kind == "dc":
            return detectors.dc_features(obs)
        if self.kind == "lamf":
            return detectors.lamf_features(obs[..., 0, :], obs[..., 1:, :], self.signature, self.lambda_grid)
        return obs

    def dim(self, obs_shape):
        if self.kind == "dc":
            return 4
        if self.kind == "lamf":
            return 3 * self.lambda_grid.size
        return int(np.prod(obs_shape))

    def to_lines(self):
        lines = [f"feature_map {self.kind}"]
        if self.signature is not None:
            lines.append("feature_signature " + " ".join(repr(float(v)) for v in self.signature))
        if self.kind == "lamf":
            lines.append("feature_lambda_grid " + " ".join(repr(float(v)) for v in self.lambda_grid))
        return lines

    @classmethod
    def from_fields(cls, fields):
        floats = lambda key: np.array([float(v) for v in fields[key].split()]) if key in fields else None
        kwargs = {"kind": fields["feature_map"], "signature": floats("feature_signature")}
        if "feature_lambda_grid" in fields:
            kwargs["lambda_grid"] = floats("feature_lambda_grid")
        return cls(**kwargs)


@dataclass
class TrainedDetector:
    network: MlpNetwork
    feature_map: FeatureMap
    tag: str
    config_hash: str = ""
    final_bce: float = float("nan")
    final_penalty: float = float("nan")

    def __call__(self, obs):
        obs = np.asarray(obs, dtype=float)
        feats = self.feature_map(obs)
        lead = feats.shape[:-1]
        return self.network.forward(feats.reshape(-1, feats.shape[-1])).reshape(lead)

    def to_text(self):
        lines = [
            f"{DETECTOR_HEADER} {DETECTOR_VERSION}",
            f"tag {self.tag}",
            f"config_hash {self.config_hash}",
            f"final_bce {self.final_bce!r}",
            f"final_penalty {self.final_penalty!r}",
        ]
        lines += self.feature_map.to_lines()
        lines += self.network.to_lines()
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text):
        lines = text.splitlines()
        fields = dict(line.partition(" ")[::2] for line in lines if line.strip())
        if fields.get(DETECTOR_HEADER) != str(DETECTOR_VERSION):
            raise ValueError(f"not a {DETECTOR_HEADER} v{DETECTOR_VERSION} file")
        return cls(
            network=MlpNetwork.from_lines(lines),
            feature_map=FeatureMap.from_fields(fields),
            tag=fields["tag"],
            config_hash=fields.get("config_hash", ""),
            final_bce=float(fields.get("final_bce", "nan")),
            final_penalty=float(fields.get("final_penalty", "nan")),
        )

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


# ---------------------------------------------------------------------------
# batches and objective


def draw_labels(config, seed, step):
    """Labels for one batch; redrawn until at least two null points exist when ``alpha > 0``."""
    n = config.points_per_batch
    for attempt in range(1000):
        labels = (stream(seed, "labels", step, attempt).random(n) < config.fake_prior_y).astype(int)
        if config.alpha == 0 or np.sum(labels == 0) >= 2:
            return labels
    raise ValueError("could not draw two null points; lower fake_prior_y or enlarge the batch")


def build_batch(config, model, seed, step=0):
    """Fake-prior parameter points plus ``replicates`` observations each."""
    labels = draw_labels(config, seed, step)
    points = [model.sample_params(int(y), stream(seed, "params", step, i)) for i, y in enumerate(labels)]
    return generate_batch(model, points, config.replicates, seed, "obs", step)


def objective(net, feats, labels, alpha, bandwidth=MEDIAN, pairing=ALL_PAIRS, bce_mode="all",
              estimator=BIASED):
    """Evaluate ``bce + alpha * penalty`` and its parameter gradient.

    ``feats`` has shape ``(points, replicates, d)``. The bandwidth is resolved
    from the pooled null scores and held constant for differentiation.
    Returns ``(terms, tape)`` with ``terms`` a dict of ``total``, ``bce``,
    ``penalty`` and ``bandwidth``.
    """
    p, m, d = feats.shape
    labels = np.asarray(labels)
    logits = net.forward(feats.reshape(p * m, d)).reshape(p, m)
    rep_labels = np.broadcast_to(labels[:, None], (p, m))
    loss, dloss = bce_loss(logits, rep_labels)
    mask = np.ones((p, m)) if bce_mode == "all" else np.eye(1, m, 0).repeat(p, axis=0)
    count = mask.sum()
    bce = float(np.sum(loss * mask) / count)
    upstream = dloss * mask / count

    null = np.flatnonzero(labels == 0)
    penalty, h = 0.0, float("nan")
    if null.size >= 2 and m >= 1:
        penalty, grads, h = cfar_penalty(list(logits[null]), KernelSpec(bandwidth), pairing, grad=True,
                                     estimator=estimator)
        if alpha != 0:
            upstream[null] += alpha * np.stack(grads)
    tape = net.backward(upstream.ravel())
    total = bce + alpha * penalty
    return {"total": total, "bce": bce, "penalty": penalty, "bandwidth": h}, tape


# ---------------------------------------------------------------------------
# training loop


def _features(batch, feature_map):
    return feature_map(batch.x)


def train(config, model, feature_map, log_path=None, tag=None, init=None):
    """Train a detector; ``alpha == 0`` gives NET, ``alpha > 0`` CFARnet.

    ``init`` is an optional network (for example a trained NET) whose
    weights and normalization are copied as the starting point.
    """
    seed = config.seed
    obs_dim = feature_map.dim(model.obs_shape)
    if init is not None:
        if list(init.layer_dims) != [obs_dim, *config.hidden, 1] or init.activation != config.activation:
            raise ValueError("initial network does not match the configured architecture")
        net = MlpNetwork.from_lines(init.to_lines())
    else:
        net = MlpNetwork([obs_dim, *config.hidden, 1], activation=config.activation, seed=seed)
        norm = _features(build_batch(config, model, seed, "norm"), feature_map).reshape(-1, obs_dim)
        net.set_normalization(norm.mean(axis=0), norm.std(axis=0))

    def job(step):
        batch = build_batch(config, model, seed, step if config.resample else 0)
        return _features(batch, feature_map), batch.labels

    rows, velocity, terms = [], None, None
    fixed = job(0) if not config.resample else None
    executor = ThreadPoolExecutor(max_workers=1) if config.prefetch and config.resample else None
    try:
        pending = executor.submit(job, 0) if executor else None
        for step in range(config.steps):
            start = time.perf_counter()
            if fixed is not None:
                feats, labels = fixed
            elif executor:
                feats, labels = pending.result()
                if step + 1 < config.steps:
                    pending = executor.submit(job, step + 1)
            else:
                feats, labels = job(step)
            terms, tape = objective(net, feats, labels, config.alpha, config.bandwidth,
                                    config.pairing, config.bce_mode, config.estimator)
            if not np.isfinite(terms["total"]):
                raise TrainingDivergedError(f"non-finite loss at step {step}: {terms}")
            frac = step / max(config.steps - 1, 1)
            lr = config.lr * (config.lr_final + (1 - config.lr_final) * 0.5 * (1 + np.cos(np.pi * frac)))
            if config.optimizer == "adam":
                velocity = adam_step(net, tape, lr, velocity)
            else:
                velocity = sgd_step(net, tape, lr, config.momentum, velocity)
            wall = (time.perf_counter() - start) * 1e3 if config.record_wall_time else 0.0
            rows.append((step, terms["bce"], terms["penalty"], terms["total"], terms["bandwidth"], wall))
    finally:
        if executor:
            executor.shutdown(wait=True, cancel_futures=True)

    if log_path is not None:
        write_training_log(rows, log_path)
    if tag is None:
        tag = "cfarnet" if config.alpha > 0 else "net"
    last = rows[-1] if rows else (0, float("nan"), float("nan"))
    return TrainedDetector(net, feature_map, tag, config.digest(), float(last[1]), float(last[2])), rows


def train_net(config, model, feature_map, log_path=None):
    if config.alpha != 0:
        raise ValueError("train_net expects alpha == 0; use train_cfarnet")
    return train(config, model, feature_map, log_path)


def train_cfarnet(config, model, feature_map, log_path=None):
    if config.alpha < 0:
        raise ValueError("alpha must be non-negative")
    return train(config, model, feature_map, log_path)


def write_training_log(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for step, bce, pen, total, h, wall in rows:
            writer.writerow([step, repr(bce), repr(pen), repr(total), repr(h), f"{wall:.3f}"])
