"""Small fully connected network with hand-written reverse mode.

The network maps a feature vector to one scalar logit. Inputs are first
standardized with stored per-feature constants, hidden layers use a smooth
activation and the output layer is affine.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .rng import stream

FORMAT_HEADER = "cfardet-mlp"
FORMAT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    """Raised when an optimizer step would apply a NaN or infinite gradient."""


def _tanh(z):
    a = np.tanh(z)
    return a, 1.0 - a * a


def _softplus(z):
    return np.logaddexp(0.0, z), expit(z)


ACTIVATIONS = {"tanh": _tanh, "softplus": _softplus}


@dataclass
class GradientTape:
    weights: list
    biases: list
    inputs: np.ndarray = None

    def zero(self):
        for g in self.weights + self.biases:
            g[...] = 0.0
        if self.inputs is not None:
            self.inputs[...] = 0.0

    def flat(self):
        return np.concatenate([g.ravel() for pair in zip(self.weights, self.biases) for g in pair])


class MlpNetwork:
    def __init__(self, layer_dims, activation="tanh", feature_mean=None, feature_scale=None,
                 seed=0, zero_last_layer=False):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or dims[-1] != 1 or min(dims) < 1:
            raise ValueError(f"layer_dims must end in 1 and have positive widths, got {dims}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_dims = dims
        self.activation = activation
        self.feature_mean = np.zeros(dims[0]) if feature_mean is None else np.asarray(feature_mean, float)
        self.feature_scale = np.ones(dims[0]) if feature_scale is None else np.asarray(feature_scale, float)
        rng = stream(seed, "init")
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        if zero_last_layer:
            self.weights[-1][...] = 0.0
        self._cache = None

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self):
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def set_normalization(self, mean, scale):
        scale = np.asarray(scale, dtype=float)
        self.feature_mean = np.asarray(mean, dtype=float)
        self.feature_scale = np.where(scale > 0, scale, 1.0)

    def forward(self, features):
        """Logits for a ``(batch, d)`` array (or a scalar for one ``(d,)`` vector)."""
        f = np.asarray(features, dtype=float)
        single = f.ndim == 1
        f = np.atleast_2d(f)
        if f.shape[-1] != self.layer_dims[0]:
            raise ValueError(f"expected {self.layer_dims[0]} features, got {f.shape[-1]}")
        act = ACTIVATIONS[self.activation]
        a = (f - self.feature_mean) / self.feature_scale
        inputs, slopes = [a], []
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if k < last:
                a, slope = act(z)
                inputs.append(a)
                slopes.append(slope)
            else:
                a = z
        self._cache = (inputs, slopes)
        out = a[:, 0]
        return float(out[0]) if single else out

    def backward(self, upstream):
        """Gradients of ``sum(upstream * logits)`` for the last forward batch."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        inputs, slopes = self._cache
        g = np.asarray(upstream, dtype=float).reshape(-1, 1)
        if g.shape[0] != inputs[0].shape[0]:
            raise ValueError("upstream gradient does not match the cached batch")
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = inputs[k].T @ g
            gb[k] = g.sum(axis=0)
            g = g @ self.weights[k].T
            if k > 0:
                g = g * slopes[k - 1]
        return GradientTape(gw, gb, g / self.feature_scale)

    # -- serialization ------------------------------------------------------

    def to_lines(self):
        fmt = lambda arr: " ".join(repr(float(v)) for v in np.ravel(arr))
        lines = [
            f"{FORMAT_HEADER} {FORMAT_VERSION}",
            f"activation {self.activation}",
            "dims " + " ".join(str(d) for d in self.layer_dims),
            "norm_mean " + fmt(self.feature_mean),
            "norm_scale " + fmt(self.feature_scale),
        ]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            lines.append(f"W{k} " + fmt(w))
            lines.append(f"b{k} " + fmt(b))
        return lines

    @classmethod
    def from_lines(cls, lines):
        fields = {}
        for line in lines:
            key, _, rest = line.strip().partition(" ")
            if key:
                fields[key] = rest
        header = fields.get(FORMAT_HEADER)
        if header is None or int(header) != FORMAT_VERSION:
            raise ValueError(f"not a {FORMAT_HEADER} v{FORMAT_VERSION} network")
        dims = [int(v) for v in fields["dims"].split()]
        floats = lambda key: np.array([float(v) for v in fields[key].split()])
        net = cls(dims, activation=fields["activation"], feature_mean=floats("norm_mean"),
                  feature_scale=floats("norm_scale"))
        for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            net.weights[k] = floats(f"W{k}").reshape(fan_in, fan_out)
            net.biases[k] = floats(f"b{k}").reshape(fan_out)
        return net


def bce_loss(logit, label):
    """Stable ``log(1 + exp(-t * logit))`` with ``t = 2 * label - 1``, and its derivative."""
    logit = np.asarray(logit, dtype=float)
    label = np.asarray(label)
    if np.any((label != 0) & (label != 1)):
        raise ValueError("labels must be 0 or 1")
    t = 2.0 * label - 1.0
    loss = np.logaddexp(0.0, -t * logit)
    dloss = -t * expit(-t * logit)
    if loss.ndim == 0:
        return float(loss), float(dloss)
    return loss, dloss


def sgd_step(net, tape, lr, momentum=0.0, velocity=None):
    """In-place heavy-ball update ``v = momentum * v + g``, ``p -= lr * v``.

    Returns the velocity buffers to pass into the next call.
    """
    if not lr >= 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
    grads = [g for pair in zip(tape.weights, tape.biases) for g in pair]
    bad = [k for k, g in enumerate(grads) if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient in parameter block(s) {bad}; step aborted")
    params = net.params()
    if velocity is None:
        velocity = [np.zeros_like(p) for p in params]
    for p, v, g in zip(params, velocity, grads):
        v *= momentum
        v += g
        p -= lr * v
    return velocity


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_step(net, tape, lr, state=None, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction; returns the optimizer state."""
    if not lr >= 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    grads = [g for pair in zip(tape.weights, tape.biases) for g in pair]
    bad = [k for k, g in enumerate(grads) if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient in parameter block(s) {bad}; step aborted")
    params = net.params()
    if state is None:
        state = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, m, v, g in zip(params, state.m, state.v, grads):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
