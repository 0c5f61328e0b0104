"""Feedforward networks with hand-derived backprop and two optimizers.

Weights are stored as ``(fan_in, fan_out)`` float64 arrays so a layer computes
``h @ W + b``. Hidden layers apply the activation; the last layer is affine and
produces logits.
"""

from dataclasses import dataclass, field
import hashlib
import zlib

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh")


def derive_rng(seed, *keys):
    """Independent generator for ``seed`` and a path of string/int keys.

    String keys are mapped through CRC32 so the stream does not depend on
    Python's salted ``hash``.
    """
    entropy = [int(seed)]
    for key in keys:
        entropy.append(zlib.crc32(key.encode()) if isinstance(key, str) else int(key))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@dataclass
class Mlp:
    layer_dims: tuple
    weights: list
    biases: list
    activation: str = "relu"

    @property
    def n_classes(self):
        return self.layer_dims[-1]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        return Mlp(tuple(self.layer_dims), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activation)

    def flat_params(self):
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)

    def set_flat_params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = flat[pos:pos + w.size].reshape(w.shape)
            pos += w.size
            b[...] = flat[pos:pos + b.size]
            pos += b.size

    def digest(self):
        return hashlib.sha256(self.flat_params().tobytes()).hexdigest()

    def __call__(self, inputs):
        return forward(self, inputs)


def _check_dims(layer_dims):
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigError(f"layer dims need >= 2 entries, all >= 1; got {list(layer_dims)}")
    return dims


def init_bound(fan_in):
    """Half-width of the uniform init interval: sqrt(6 / fan_in)."""
    return np.sqrt(6.0 / fan_in)


def init_mlp(layer_dims, activation="relu", seed=0):
    """Random network: weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases."""
    dims = _check_dims(layer_dims)
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    rng = derive_rng(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = init_bound(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(dims, weights, biases, activation)


def _activate(a, kind):
    return np.maximum(a, 0.0) if kind == "relu" else np.tanh(a)


def _activate_grad(a, h, kind):
    return (a > 0).astype(np.float64) if kind == "relu" else 1.0 - h * h


def _as_batch(model, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ShapeError(f"inputs of shape {x.shape} do not fit input dim {model.layer_dims[0]}")
    return x


def forward(model, inputs, return_cache=False):
    """Logits for a batch of inputs, shape ``(batch, C)``."""
    h = _as_batch(model, inputs)
    cache = [(None, h)]
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = h @ w + b
        h = a if i == last else _activate(a, model.activation)
        if return_cache:
            cache.append((a, h))
    return (h, cache) if return_cache else h


def features(model, inputs):
    """Penultimate-layer activations (input to the final affine layer)."""
    h = _as_batch(model, inputs)
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = _activate(h @ w + b, model.activation)
    return h


@dataclass
class Gradients:
    weights: list
    biases: list

    def flat(self):
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b.ravel()]
        return np.concatenate(parts)


def backward(model, cache, dlogits):
    """Backpropagate a logit gradient through a cached forward pass."""
    n_layers = len(model.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    delta = dlogits
    for i in range(n_layers - 1, -1, -1):
        if not np.all(np.isfinite(delta)):
            raise NumericError("non-finite gradient", layer=i)
        h_in = cache[i][1]
        gw[i] = h_in.T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            a_prev, h_prev = cache[i]
            delta = (delta @ model.weights[i].T) * _activate_grad(a_prev, h_prev, model.activation)
    return Gradients(gw, gb)


def loss_gradients(model, inputs, loss):
    """Loss value and parameter gradients.

    ``loss`` maps a logit batch to ``(value, dvalue/dlogits)``.
    """
    logits, cache = forward(model, inputs, return_cache=True)
    for i, (a, _) in enumerate(cache[1:]):
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite activation", layer=i)
    value, dlogits = loss(logits)
    if not np.isfinite(value):
        raise NumericError("non-finite loss", layer=len(model.weights) - 1)
    return value, backward(model, cache, np.asarray(dlogits, dtype=np.float64))


@dataclass
class OptimizerState:
    """Optimizer hyperparameters plus per-parameter moment buffers.

    ``sgd_momentum`` follows the heavy-ball form ``v = mu*v + g; w -= lr*v``.
    ``adam`` is the bias-corrected Adam update. Weight decay is added to the
    weight gradients (not biases) before either update.
    """

    kind: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")

    def hyperparams(self):
        return {k: getattr(self, k) for k in
                ("kind", "learning_rate", "momentum", "beta1", "beta2", "eps", "weight_decay")}

    def copy(self):
        return OptimizerState(**self.hyperparams(), t=self.t,
                              first=[a.copy() for a in self.first],
                              second=[a.copy() for a in self.second])


def _params(model):
    out = []
    for w, b in zip(model.weights, model.biases):
        out += [w, b]
    return out


def step(model, grads, opt):
    """Apply one optimizer update in place; returns ``(model, opt)``."""
    params = _params(model)
    gs = []
    for gw, gb in zip(grads.weights, grads.biases):
        gs += [gw, gb]
    if len(gs) != len(params) or any(g.shape != p.shape for g, p in zip(gs, params)):
        raise ShapeError("gradient shapes do not match the model")
    if not opt.first:
        opt.first = [np.zeros_like(p) for p in params]
        opt.second = [np.zeros_like(p) for p in params] if opt.kind == "adam" else []
    opt.t += 1
    for idx, (p, g) in enumerate(zip(params, gs)):
        if opt.weight_decay and idx % 2 == 0:
            g = g + opt.weight_decay * p
        if opt.kind == "sgd_momentum":
            v = opt.first[idx]
            v *= opt.momentum
            v += g
            p -= opt.learning_rate * v
        else:
            m, s = opt.first[idx], opt.second[idx]
            m *= opt.beta1
            m += (1.0 - opt.beta1) * g
            s *= opt.beta2
            s += (1.0 - opt.beta2) * g * g
            m_hat = m / (1.0 - opt.beta1 ** opt.t)
            s_hat = s / (1.0 - opt.beta2 ** opt.t)
            p -= opt.learning_rate * m_hat / (np.sqrt(s_hat) + opt.eps)
    return model, opt
