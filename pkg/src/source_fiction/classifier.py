"""A small numpy MLP with a designated latent layer.

The latent layer splits the network into an encoder (layers up to and
including ``latent_index``) and a head (the remaining layers). Prediction is
always computed as ``head(encoder(x))`` so the factorisation is exact.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, FormatError, ParameterError, PreconditionError
from .seeding import rng_for

ACTIVATIONS = ("relu", "tanh", "identity")
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray
    activation: str

    @property
    def shape(self):
        return self.weight.shape


@dataclass(frozen=True, eq=False)
class ClassifierParams:
    layers: tuple
    latent_index: int
    num_classes: int
    loss_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ParameterError("a classifier needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ParameterError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.weight.shape[1],):
                raise ParameterError(f"layer {k}: bias shape {layer.bias.shape} does not match weight")
            if k and layers[k - 1].weight.shape[1] != layer.weight.shape[0]:
                raise ParameterError(f"layer {k}: input size does not chain with layer {k - 1}")
        if layers[-1].weight.shape[1] != self.num_classes:
            raise ParameterError("final layer width must equal num_classes")
        if not 0 <= self.latent_index < len(layers):
            raise ParameterError("latent_index out of range")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[0]

    @property
    def latent_dim(self):
        return self.layers[self.latent_index].weight.shape[1]

    @property
    def head(self):
        return self.layers[self.latent_index + 1:]

    def equals(self, other):
        return (
            self.latent_index == other.latent_index
            and self.num_classes == other.num_classes
            and len(self.layers) == len(other.layers)
            and all(
                a.activation == b.activation
                and np.array_equal(a.weight, b.weight)
                and np.array_equal(a.bias, b.bias)
                for a, b in zip(self.layers, other.layers)
            )
        )

    def to_dict(self):
        return {
            "format": FORMAT_VERSION,
            "latent_index": self.latent_index,
            "num_classes": self.num_classes,
            "layers": [
                {
                    "shape": list(layer.weight.shape),
                    "weight": layer.weight.ravel().tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_VERSION:
            raise FormatError(f"unsupported model format {doc.get('format')!r}")
        try:
            layers = []
            for entry in doc["layers"]:
                shape = tuple(entry["shape"])
                w = np.asarray(entry["weight"], dtype=float).reshape(shape)
                layers.append(Layer(w, np.asarray(entry["bias"], dtype=float), entry["activation"]))
            return cls(tuple(layers), int(doc["latent_index"]), int(doc["num_classes"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"malformed model document: {exc}") from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 300
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer {self.optimizer!r}")


def _activate(z, tag):
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(pre, post, tag):
    if tag == "relu":
        return (pre > 0).astype(float)
    if tag == "tanh":
        return 1.0 - post ** 2
    return np.ones_like(pre)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    logits = np.atleast_2d(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -logp[np.arange(len(labels)), labels]


def _run(layers, x):
    for layer in layers:
        x = _activate(x @ layer.weight + layer.bias, layer.activation)
    return x


def _check_input(params, features):
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise ParameterError(f"expected {params.input_dim} features, got {x.shape[1]}")
    return x


def latent(params, features):
    """Activations at the latent layer, one row per input row."""
    x = _check_input(params, features)
    return _run(params.layers[: params.latent_index + 1], x)


def head_logits(params, latent_points):
    z = np.asarray(latent_points, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[1] != params.latent_dim:
        raise ParameterError(f"expected latent dimension {params.latent_dim}, got {z.shape[1]}")
    return _run(params.head, z)


def logits(params, features):
    return head_logits(params, latent(params, features))


def head_predict(params, latent_points):
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return np.argmax(head_logits(params, latent_points), axis=1)


def predict(params, features):
    return head_predict(params, latent(params, features))


def predict_proba(params, features):
    return softmax(logits(params, features))


def head_loss(params, latent_points, labels):
    """Per-row softmax cross-entropy of the head evaluated at latent points."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    return cross_entropy(head_logits(params, latent_points), labels)


def head_loss_gradient(params, latent_point, target_label):
    """Exact gradient of the head's cross-entropy w.r.t. the latent input.

    Accepts a single vector (returns a vector) or a batch of rows with one
    label per row (returns a matrix).
    """
    z = np.asarray(latent_point, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != params.latent_dim:
        raise ParameterError(f"expected latent dimension {params.latent_dim}, got {z.shape[1]}")
    labels = np.broadcast_to(np.asarray(target_label, dtype=np.int64), (z.shape[0],))
    if np.any(labels < 0) or np.any(labels >= params.num_classes):
        raise ParameterError("target_label out of range")

    pres, posts = [], [z]
    h = z
    for layer in params.head:
        pre = h @ layer.weight + layer.bias
        h = _activate(pre, layer.activation)
        pres.append(pre)
        posts.append(h)
    delta = softmax(h)
    delta[np.arange(len(labels)), labels] -= 1.0
    for k in range(len(params.head) - 1, -1, -1):
        layer = params.head[k]
        delta = delta * _activate_grad(pres[k], posts[k + 1], layer.activation)
        delta = delta @ layer.weight.T
    return delta[0] if single else delta


def init_params(arch, num_classes, seed, latent_index=None, hidden_activation="relu"):
    """He-initialised weights for layer sizes ``arch = [d, h1, ..., C]``.

    The latent layer defaults to the last hidden layer.
    """
    arch = list(arch)
    if len(arch) < 2:
        raise ParameterError("arch needs an input and an output size")
    if arch[-1] != num_classes:
        raise ParameterError(f"arch must end in num_classes={num_classes}, got {arch[-1]}")
    rng = rng_for(seed, "classifier.init")
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(arch[:-1], arch[1:])):
        last = k == len(arch) - 2
        w = rng.normal(scale=np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        layers.append(Layer(w, np.zeros(fan_out), "identity" if last else hidden_activation))
    if latent_index is None:
        latent_index = max(len(layers) - 2, 0)
    return ClassifierParams(tuple(layers), latent_index, num_classes)


def _forward_cache(layers, x):
    pres, posts = [], [x]
    for layer in layers:
        pre = x @ layer.weight + layer.bias
        x = _activate(pre, layer.activation)
        pres.append(pre)
        posts.append(x)
    return pres, posts


def _gradients(layers, x, y):
    pres, posts = _forward_cache(layers, x)
    delta = softmax(posts[-1])
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        delta = delta * _activate_grad(pres[k], posts[k + 1], layers[k].activation)
        grads[k] = (posts[k].T @ delta, delta.sum(axis=0))
        delta = delta @ layers[k].weight.T
    return grads


def full_batch_loss(params, features, labels):
    return float(np.mean(cross_entropy(logits(params, features), labels)))


def train(data, arch, cfg, latent_index=None):
    """Fit the classifier with minibatch softmax cross-entropy.

    ``arch`` lists layer widths from input to output and must end in
    ``data.num_classes``. The full-batch loss after each epoch is kept in
    ``loss_history``.
    """
    if not data.fully_labeled:
        raise PreconditionError("training data contains unlabeled rows")
    if arch[0] != data.dim:
        raise ParameterError(f"arch starts with {arch[0]}, data has {data.dim} features")
    params = init_params(arch, data.num_classes, cfg.seed, latent_index)
    if cfg.epochs == 0:
        return params

    x, y = data.features, data.labels
    weights = [np.array(l.weight) for l in params.layers]
    biases = [np.array(l.bias) for l in params.layers]
    acts = [l.activation for l in params.layers]
    state = [(np.zeros_like(w), np.zeros_like(b), np.zeros_like(w), np.zeros_like(b))
             for w, b in zip(weights, biases)]
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    rng = rng_for(cfg.seed, "classifier.batches")
    history = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(y))
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            layers = [Layer(w, b, a) for w, b, a in zip(weights, biases, acts)]
            grads = _gradients(layers, x[idx], y[idx])
            step += 1
            for k, (gw, gb) in enumerate(grads):
                if cfg.optimizer == "sgd":
                    weights[k] -= cfg.learning_rate * gw
                    biases[k] -= cfg.learning_rate * gb
                else:
                    mw, mb, vw, vb = state[k]
                    mw[:] = beta1 * mw + (1 - beta1) * gw
                    mb[:] = beta1 * mb + (1 - beta1) * gb
                    vw[:] = beta2 * vw + (1 - beta2) * gw ** 2
                    vb[:] = beta2 * vb + (1 - beta2) * gb ** 2
                    c1, c2 = 1 - beta1 ** step, 1 - beta2 ** step
                    weights[k] -= cfg.learning_rate * (mw / c1) / (np.sqrt(vw / c2) + adam_eps)
                    biases[k] -= cfg.learning_rate * (mb / c1) / (np.sqrt(vb / c2) + adam_eps)
        layers = [Layer(w, b, a) for w, b, a in zip(weights, biases, acts)]
        loss = float(np.mean(cross_entropy(_run(layers, x), y)))
        if not np.isfinite(loss):
            raise DivergenceError(epoch, loss)
        history.append(loss)

    layers = tuple(Layer(w.copy(), b.copy(), a) for w, b, a in zip(weights, biases, acts))
    return ClassifierParams(layers, params.latent_index, params.num_classes, tuple(history))


def default_arch(dim, num_classes):
    return [dim, 32, 16, num_classes]


def accuracy(params, data):
    mask = data.labeled_mask
    if not mask.any():
        return float("nan")
    return float(np.mean(predict(params, data.features[mask]) == data.labels[mask]))
