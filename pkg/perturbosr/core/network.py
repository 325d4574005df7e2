#
# License: See LICENSE.md file
#
"""
The base classifier: a multilayer perceptron of affine + ReLU blocks with a softmax head, trained with Adam on the
mean cross-entropy. Its parameters are what `perturbosr.core.perturbation` perturbs, and its penultimate activations
are the default feature space of the detectors.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

import perturbosr
from perturbosr.utils import IntIOWrapper, read_state_header, write_state_header

logger = perturbosr.logging.get_logger(__name__)

PROB_CLAMP = 1e-12

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

ACTIVATIONS = ("ReLU", )


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple
    num_classes: int
    activation: str = "ReLU"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if len(self.hidden_dims) == 0:
            raise ValueError("hidden_dims must be non-empty")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {list(self.hidden_dims)}")
        if int(self.num_classes) < 2:
            raise ValueError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unsupported activation: {self.activation}")

    @property
    def layer_shapes(self):
        """(out, in) weight shape of every layer, input to head."""
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


@dataclass
class NetworkParams:
    """
    Ordered `(weight, bias)` pairs. A weight has shape (out, in), so a layer computes `W @ x + b`.
    """
    layers: list

    def copy(self):
        return NetworkParams([(w.copy(), b.copy()) for w, b in self.layers])

    def flat_layer(self, index):
        w, b = self.layers[index]
        return np.concatenate([w.ravel(), b.ravel()])

    def checksum(self):
        m = hashlib.sha256()
        for w, b in self.layers:
            m.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
            m.update(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return m.hexdigest()

    def conforms_to(self, spec):
        if len(self.layers) != len(spec.layer_shapes):
            return False
        for (w, b), shape in zip(self.layers, spec.layer_shapes):
            if w.shape != shape or b.shape != (shape[0], ):
                return False
        return True

    def is_finite(self):
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in self.layers)

    def save_state(self, f):
        f.write_16bit(len(self.layers))
        for w, b in self.layers:
            f.write_array(w)
            f.write_array(b)

    @classmethod
    def load_state(cls, f, state_version):
        count = f.read_16bit()
        return cls([(f.read_array(), f.read_array()) for _ in range(count)])


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class ClassifierModel:
    spec: NetworkSpec
    params: NetworkParams = field(compare=False)
    seed: int = 0

    def __post_init__(self):
        assert self.params.conforms_to(self.spec), "Parameters do not match the network spec"

    @property
    def num_classes(self):
        return self.spec.num_classes

    def save_state(self, f):
        f.write_64bit(self.spec.input_dim)
        f.write_16bit(len(self.spec.hidden_dims))
        for h in self.spec.hidden_dims:
            f.write_64bit(h)
        f.write_64bit(self.spec.num_classes)
        f.write_string(self.spec.activation)
        f.write_64bit(self.seed)
        self.params.save_state(f)

    @classmethod
    def load_state(cls, f, state_version):
        input_dim = f.read_64bit()
        hidden_dims = tuple(f.read_64bit() for _ in range(f.read_16bit()))
        num_classes = f.read_64bit()
        activation = f.read_string()
        seed = f.read_64bit()
        spec = NetworkSpec(input_dim, hidden_dims, num_classes, activation)
        return cls(spec, NetworkParams.load_state(f, state_version), seed)


def init_network(spec, seed):
    """
    Weights are drawn from N(0, 2 / fan_in), biases start at zero.

    ```python
    >>> model = init_network(NetworkSpec(2, [3], 2), seed=7)
    >>> [(w.shape, b.shape) for w, b in model.params.layers]
    [((3, 2), (3,)), ((2, 3), (2,))]

    ```
    """
    rng = np.random.default_rng(seed)
    layers = []
    for fan_out, fan_in in spec.layer_shapes:
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        layers.append((w, np.zeros(fan_out)))
    return ClassifierModel(spec, NetworkParams(layers), seed)


def _check_input(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != spec.input_dim:
        raise ValueError(f"Expected input of length {spec.input_dim}, got shape {x.shape}")
    return x


def _forward_params(params, X):
    """Returns (logits, activations of every hidden layer, pre-activations of every hidden layer)."""
    activations = [X]
    pre_activations = []
    h = X
    for w, b in params.layers[:-1]:
        z = h @ w.T + b
        pre_activations.append(z)
        h = np.maximum(z, 0.0)
        activations.append(h)
    w, b = params.layers[-1]
    return h @ w.T + b, activations, pre_activations


def forward(model, x, params=None):
    """
    Evaluates the network on one sample or a batch of row samples.

    Returns `(logits, probs, embedding)`, where `embedding` is the last hidden layer's activation. `params` evaluates
    a perturbed parameter set with the architecture of `model`.
    """
    x = _check_input(model.spec, x)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    logits, activations, _ = _forward_params(model.params if params is None else params, X)
    probs = softmax(logits, axis=1)
    embedding = activations[-1]
    if single:
        return logits[0], probs[0], embedding[0]
    return logits, probs, embedding


def predict_proba(model, X, params=None):
    return forward(model, X, params)[1]


def embed(model, X):
    return forward(model, X)[2]


def cross_entropy(probs, label):
    """
    Negative log-probability of the 1-based `label`, with the probability clamped at 1e-12.

    ```python
    >>> round(cross_entropy([0.25, 0.25, 0.25, 0.25], 2), 6)
    1.386294

    ```
    """
    probs = np.asarray(probs, dtype=np.float64)
    if not 1 <= label <= probs.shape[-1]:
        raise ValueError(f"Label {label} out of range 1..{probs.shape[-1]}")
    return float(-np.log(max(probs[label - 1], PROB_CLAMP)))


def _check_labels(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() > num_classes):
        raise ValueError(f"Labels must be in 1..{num_classes}")
    return labels


def mean_loss(model, X, labels, params=None):
    X = np.atleast_2d(_check_input(model.spec, X))
    labels = _check_labels(labels, model.num_classes)
    probs = predict_proba(model, X, params)
    picked = probs[np.arange(len(labels)), labels - 1]
    return float(np.mean(-np.log(np.maximum(picked, PROB_CLAMP))))


def gradients(model, X, labels, params=None):
    """
    Backpropagation of the mean cross-entropy over a batch. Returns a `NetworkParams` holding dW, db per layer.
    """
    params = model.params if params is None else params
    X = np.atleast_2d(_check_input(model.spec, X))
    labels = np.atleast_1d(_check_labels(labels, model.num_classes))
    if len(X) == 0:
        raise ValueError("Empty batch")
    if len(X) != len(labels):
        raise ValueError(f"Batch has {len(X)} samples but {len(labels)} labels")

    n = len(X)
    logits, activations, pre_activations = _forward_params(params, X)
    delta = softmax(logits, axis=1)
    delta[np.arange(n), labels - 1] -= 1.0
    delta /= n

    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        grads[i] = (delta.T @ activations[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w) * (pre_activations[i - 1] > 0)
    return NetworkParams(grads)


def train(model, X, labels, config, loss_history=None):
    """
    Adam over shuffled mini-batches. A pure function of (model, data, config): the shuffling stream is seeded by
    `config.seed`. If `loss_history` is a list, the mean training loss of every epoch is appended to it.
    """
    X = np.atleast_2d(_check_input(model.spec, X))
    labels = _check_labels(labels, model.num_classes)
    if len(X) == 0:
        raise ValueError("Cannot train on an empty dataset")
    if len(X) != len(labels):
        raise ValueError(f"Dataset has {len(X)} samples but {len(labels)} labels")
    if config.learning_rate == 0:
        logger.warning("Training with a zero learning rate leaves the parameters unchanged")

    rng = np.random.default_rng(config.seed)
    params = model.params.copy()
    m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
    v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
    lr = config.learning_rate
    step = 0

    for epoch in range(config.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            batch = order[start:start + config.batch_size]
            grads = gradients(model, X[batch], labels[batch], params)
            step += 1
            correction1 = 1 - ADAM_BETA1**step
            correction2 = 1 - ADAM_BETA2**step
            updated = []
            for i, ((w, b), (gw, gb)) in enumerate(zip(params.layers, grads.layers)):
                new_layer = []
                for j, (p, g) in enumerate(((w, gw), (b, gb))):
                    m[i][j][...] = ADAM_BETA1 * m[i][j] + (1 - ADAM_BETA1) * g
                    v[i][j][...] = ADAM_BETA2 * v[i][j] + (1 - ADAM_BETA2) * g * g
                    m_hat = m[i][j] / correction1
                    v_hat = v[i][j] / correction2
                    new_layer.append(p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS))
                updated.append(tuple(new_layer))
            params = NetworkParams(updated)

        if loss_history is not None:
            loss_history.append(mean_loss(model, X, labels, params))
        if (epoch + 1) % 10 == 0:
            logger.debug("Epoch %d/%d", epoch + 1, config.epochs)

    assert params.is_finite(), "Training diverged to non-finite parameters"
    return ClassifierModel(model.spec, params, config.seed)


def predict(model, x):
    """
    1-based argmax of the class probabilities; ties go to the lowest class index.
    """
    probs = forward(model, x)[1]
    return argmax_label(probs)


def argmax_label(probs):
    probs = np.asarray(probs)
    # np.argmax returns the first maximal index
    if probs.ndim == 1:
        return int(np.argmax(probs)) + 1
    return np.argmax(probs, axis=1) + 1


def save_model(model, path):
    with open(path, "wb") as fh:
        f = IntIOWrapper(fh)
        write_state_header(f)
        model.save_state(f)
        f.flush()
    logger.info("Model checkpoint saved in %s", path)


def load_model(path):
    with open(path, "rb") as fh:
        f = IntIOWrapper(fh)
        state_version = read_state_header(f)
        return ClassifierModel.load_state(f, state_version)
