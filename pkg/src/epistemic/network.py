"""Dense feed-forward classifier with per-layer activation capture.

The network is a stack of dense layers, each storing a weight matrix of shape
(in_dim, out_dim) applied as ``h = phi(x @ W + b)``. The final layer must be a
softmax layer; its captured activation is the pre-softmax logit vector, so the
probability output itself is never exposed as a feature space. Training is
plain mini-batch SGD on softmax cross-entropy with hand-derived backprop, made
fully deterministic by a single seed (initialization and shuffle order).

forward/predict/gradient routines are read-only on the net and safe to call
concurrently; train builds and returns a fresh net.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linalg import as_matrix, as_vector


class NetworkError(ValueError):
    """Raised on dimension mismatches, bad hyperparameters, or malformed files."""


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"
    LINEAR = "linear"
    SOFTMAX = "softmax"

    @property
    def lipschitz(self) -> float:
        # relu/tanh/linear are 1-Lipschitz; softmax carries 1 by convention
        # but is flagged unusable for bound propagation.
        return 1.0

    @property
    def usable_for_bounds(self) -> bool:
        return self is not Activation.SOFTMAX


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    activation: Activation

    def __post_init__(self):
        w = as_matrix(self.weights)
        b = as_vector(self.bias)
        if b.shape[0] != w.shape[1]:
            raise NetworkError(
                f"bias length {b.shape[0]} does not match weight columns {w.shape[1]}"
            )
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class LayeredNet:
    """Ordered dense layers; the last layer is softmax over class logits."""

    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise NetworkError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise NetworkError(
                    f"layer {i} expects input dim {layers[i].in_dim} but layer "
                    f"{i - 1} outputs {layers[i - 1].out_dim}"
                )
        for i, layer in enumerate(layers[:-1]):
            if layer.activation is Activation.SOFTMAX:
                raise NetworkError(f"softmax is only allowed on the final layer, not layer {i}")
        if layers[-1].activation is not Activation.SOFTMAX:
            raise NetworkError("the final layer must use the softmax activation")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def class_count(self) -> int:
        return self.layers[-1].out_dim


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with integer labels and a train/validation/test role tag."""

    x: np.ndarray  # (n_samples, n_features)
    y: np.ndarray  # (n_samples,) ints in [0, class_count)
    role: str = "train"

    def __post_init__(self):
        x = as_matrix(self.x)
        y = np.asarray(self.y, dtype=np.int64)
        if y.ndim != 1:
            raise NetworkError("labels must be a 1-D integer array")
        if x.shape[0] != y.shape[0]:
            raise NetworkError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size and y.min() < 0:
            raise NetworkError("labels must be non-negative")
        if self.role not in ("train", "validation", "test"):
            raise NetworkError(f"unknown dataset role {self.role!r}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def size(self) -> int:
        return self.x.shape[0]


def make_net(input_dim: int, hidden: list[int], class_count: int,
             activation: str = "relu") -> LayeredNet:
    """Zero-initialized architecture; train() supplies the actual weights."""
    act = Activation(activation)
    if act is Activation.SOFTMAX:
        raise NetworkError("hidden activation cannot be softmax")
    widths = [input_dim, *hidden, class_count]
    if any(w < 1 for w in widths):
        raise NetworkError(f"all layer widths must be >= 1, got {widths}")
    layers = []
    for i in range(len(widths) - 1):
        kind = act if i < len(widths) - 2 else Activation.SOFTMAX
        layers.append(Layer(np.zeros((widths[i], widths[i + 1])), np.zeros(widths[i + 1]), kind))
    return LayeredNet(tuple(layers))


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _apply(act: Activation, z: np.ndarray) -> np.ndarray:
    if act is Activation.RELU:
        return np.maximum(z, 0.0)
    if act is Activation.TANH:
        return np.tanh(z)
    return z  # linear; softmax layers capture pre-activation


def forward_batch(net: LayeredNet, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-layer activations and softmax probabilities for a batch.

    activations[i] holds layer i's post-activation values, except the final
    softmax layer whose entry is the logit matrix.
    """
    x = as_matrix(x)
    if x.shape[1] != net.input_dim:
        raise NetworkError(f"input dim {x.shape[1]} does not match network input {net.input_dim}")
    activations = []
    h = x
    for layer in net.layers:
        z = h @ layer.weights + layer.bias
        h = _apply(layer.activation, z)
        activations.append(h)
    return activations, _softmax(activations[-1])


def forward_capture(net: LayeredNet, x) -> tuple[list[np.ndarray], np.ndarray]:
    """Single-sample forward pass: (per-layer activations, softmax output)."""
    x = as_vector(x)
    activations, probs = forward_batch(net, x[None, :])
    return [a[0] for a in activations], probs[0]


def predict(net: LayeredNet, x) -> int:
    """Class with the largest softmax output; ties go to the lowest index."""
    _, probs = forward_capture(net, x)
    return int(np.argmax(probs))


def predict_batch(net: LayeredNet, x: np.ndarray) -> np.ndarray:
    _, probs = forward_batch(net, x)
    return np.argmax(probs, axis=1)


def _glorot_init(net: LayeredNet, rng: np.random.Generator) -> list[Layer]:
    layers = []
    for layer in net.layers:
        limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        w = rng.uniform(-limit, limit, size=layer.weights.shape)
        layers.append(Layer(w, np.zeros(layer.out_dim), layer.activation))
    return layers


def _activation_grad(act: Activation, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if act is Activation.RELU:
        return (z > 0.0).astype(np.float64)
    if act is Activation.TANH:
        return 1.0 - h * h
    return np.ones_like(z)


def train(net: LayeredNet, data: Dataset, epochs: int, learning_rate: float,
          batch_size: int, seed: int) -> LayeredNet:
    """Mini-batch SGD on softmax cross-entropy, deterministic for a seed.

    Weights are re-initialized from the seed (Glorot uniform), then trained;
    zero epochs returns the freshly initialized net. The input net only
    supplies the architecture and is not modified.
    """
    if data.role != "train":
        raise NetworkError(f"training data must have role 'train', got {data.role!r}")
    if data.size == 0:
        raise NetworkError("training dataset is empty")
    if epochs < 0 or learning_rate <= 0.0 or batch_size < 1:
        raise NetworkError(
            f"bad hyperparameters: epochs={epochs}, learning_rate={learning_rate}, "
            f"batch_size={batch_size}"
        )
    if data.x.shape[1] != net.input_dim:
        raise NetworkError(
            f"data dim {data.x.shape[1]} does not match network input {net.input_dim}"
        )
    if int(data.y.max()) >= net.class_count:
        raise NetworkError(f"label {int(data.y.max())} out of range for {net.class_count} classes")

    rng = np.random.default_rng(seed)
    layers = _glorot_init(net, rng)
    n = data.size
    onehot = np.eye(net.class_count)[data.y]

    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb, tb = data.x[idx], onehot[idx]
            m = len(idx)

            # forward, keeping pre-activations for the backward pass
            hs = [xb]
            zs = []
            for layer in layers:
                z = hs[-1] @ layer.weights + layer.bias
                zs.append(z)
                hs.append(_apply(layer.activation, z))

            # backward: softmax cross-entropy gives probs - targets at the logits
            delta = (_softmax(zs[-1]) - tb) / m
            for li in range(len(layers) - 1, -1, -1):
                layer = layers[li]
                grad_w = hs[li].T @ delta
                grad_b = delta.sum(axis=0)
                if li > 0:
                    delta = (delta @ layer.weights.T) * _activation_grad(
                        layers[li - 1].activation, zs[li - 1], hs[li]
                    )
                layers[li] = Layer(
                    layer.weights - learning_rate * grad_w,
                    layer.bias - learning_rate * grad_b,
                    layer.activation,
                )
    return LayeredNet(tuple(layers))


def cross_entropy(net: LayeredNet, x: np.ndarray, y: np.ndarray) -> float:
    """Mean softmax cross-entropy over a batch; used by gradient checks."""
    _, probs = forward_batch(net, x)
    picked = probs[np.arange(len(y)), np.asarray(y, dtype=np.int64)]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def input_gradient(net: LayeredNet, x, true_label: int) -> np.ndarray:
    """Gradient of the cross-entropy loss at true_label w.r.t. the input."""
    x = as_vector(x)
    hs = [x[None, :]]
    zs = []
    for layer in net.layers:
        z = hs[-1] @ layer.weights + layer.bias
        zs.append(z)
        hs.append(_apply(layer.activation, z))
    target = np.zeros((1, net.class_count))
    target[0, true_label] = 1.0
    delta = _softmax(zs[-1]) - target
    for li in range(len(net.layers) - 1, 0, -1):
        delta = (delta @ net.layers[li].weights.T) * _activation_grad(
            net.layers[li - 1].activation, zs[li - 1], hs[li]
        )
    return (delta @ net.layers[0].weights.T)[0]


def bim_attack(net: LayeredNet, x, true_label: int, step: float, bound: float,
               iterations: int, clip_range: tuple[float, float] | None = None) -> np.ndarray:
    """Iterative sign-gradient perturbation within an L-infinity budget.

    Repeats x <- x + step * sign(grad), projecting onto the budget box around
    the original input (and clip_range when given) after every step.
    """
    x0 = as_vector(x).copy()
    if x0.shape[0] != net.input_dim:
        raise NetworkError(f"input dim {x0.shape[0]} does not match network {net.input_dim}")
    if not 0 <= true_label < net.class_count:
        raise NetworkError(f"label {true_label} out of range")
    if bound < 0.0 or step <= 0.0 or iterations < 1:
        raise NetworkError(
            f"bad attack parameters: step={step}, bound={bound}, iterations={iterations}"
        )
    if bound == 0.0:
        return x0
    adv = x0.copy()
    for it in range(iterations):
        grad = input_gradient(net, adv, true_label)
        if not np.all(np.isfinite(grad)):
            raise NetworkError("input gradient is not finite")
        if it == 0 and not np.any(grad):
            raise NetworkError("input gradient is identically zero (untrained or degenerate net)")
        adv = adv + step * np.sign(grad)
        adv = np.clip(adv, x0 - bound, x0 + bound)
        if clip_range is not None:
            adv = np.clip(adv, clip_range[0], clip_range[1])
    return adv


def save_weights(net: LayeredNet, path) -> None:
    """Write the weight file; floats keep their shortest round-trip form."""
    doc = {
        "input_dim": net.input_dim,
        "class_count": net.class_count,
        "layers": [
            {
                "activation": layer.activation.value,
                "rows": layer.in_dim,
                "cols": layer.out_dim,
                "weights": [float(v) for v in layer.weights.ravel()],
                "bias": [float(v) for v in layer.bias],
            }
            for layer in net.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _require(cond: bool, context: str, message: str):
    if not cond:
        raise NetworkError(f"{context}: {message}")


def load_weights(path) -> LayeredNet:
    """Read a weight file, validating every field with its location."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc
    _require(isinstance(doc, dict), str(path), "top level must be an object")
    for key in ("input_dim", "class_count", "layers"):
        _require(key in doc, str(path), f"missing field {key!r}")
    raw_layers = doc["layers"]
    _require(isinstance(raw_layers, list) and raw_layers, str(path), "'layers' must be a non-empty list")

    layers = []
    for i, entry in enumerate(raw_layers):
        ctx = f"{path}: layers[{i}]"
        _require(isinstance(entry, dict), ctx, "must be an object")
        for key in ("activation", "rows", "cols", "weights", "bias"):
            _require(key in entry, ctx, f"missing field {key!r}")
        try:
            act = Activation(entry["activation"])
        except ValueError:
            raise NetworkError(f"{ctx}.activation: unknown kind {entry['activation']!r}") from None
        rows, cols = entry["rows"], entry["cols"]
        _require(isinstance(rows, int) and rows >= 1, f"{ctx}.rows", "must be a positive integer")
        _require(isinstance(cols, int) and cols >= 1, f"{ctx}.cols", "must be a positive integer")
        weights, bias = entry["weights"], entry["bias"]
        _require(
            isinstance(weights, list) and len(weights) == rows * cols,
            f"{ctx}.weights",
            f"expected {rows * cols} values for a {rows}x{cols} matrix, got {len(weights)}",
        )
        _require(
            isinstance(bias, list) and len(bias) == cols,
            f"{ctx}.bias",
            f"expected {cols} values, got {len(bias)}",
        )
        try:
            w = np.array(weights, dtype=np.float64).reshape(rows, cols)
            b = np.array(bias, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise NetworkError(f"{ctx}: non-numeric weight data ({exc})") from exc
        layers.append(Layer(w, b, act))

    try:
        net = LayeredNet(tuple(layers))
    except NetworkError as exc:
        raise NetworkError(f"{path}: {exc}") from exc
    _require(net.input_dim == doc["input_dim"], f"{path}: input_dim",
             f"declared {doc['input_dim']} but layers start at {net.input_dim}")
    _require(net.class_count == doc["class_count"], f"{path}: class_count",
             f"declared {doc['class_count']} but final layer has {net.class_count}")
    return net
