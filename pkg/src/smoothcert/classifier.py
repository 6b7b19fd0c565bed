"""Small fully-connected softmax classifier with input gradients.

Inputs are row vectors: a batch ``X`` has shape ``(n, d)`` and each layer
computes ``h @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimMismatch, FormatError

MAGIC = b"SMCERT"
VERSION = b"01"
ACTIVATIONS = {"tanh": 1, "softplus": 2}
_TAG_TO_ACT = {v: k for k, v in ACTIVATIONS.items()}


def _act(name: str, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Activation value and its derivative."""
    if name == "tanh":
        h = np.tanh(z)
        return h, 1.0 - h * h
    h = np.logaddexp(0.0, z)
    return h, 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class Classifier:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ConfigError(f"layer {i}: bad shapes {w.shape}, {b.shape}")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ConfigError(f"layer {i} does not chain with layer {i - 1}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def init(cls, layer_dims, seed: int = 0, activation: str = "tanh") -> "Classifier":
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            ws.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs, activation)

    @classmethod
    def zeros(cls, layer_dims, activation: str = "tanh") -> "Classifier":
        ws = [np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])]
        return cls(ws, [np.zeros(b) for b in layer_dims[1:]], activation)

    @classmethod
    def constant(cls, d: int, num_classes: int, label: int = 0) -> "Classifier":
        """Input-independent classifier putting all mass on ``label``."""
        f = cls.zeros([d, num_classes])
        f.biases[0][label] = 1000.0
        return f

    def _check(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.input_dim:
            raise DimMismatch(f"expected inputs of dim {self.input_dim}, got shape {x.shape}")
        return x2, single

    def _forward(self, x: np.ndarray):
        derivs = []
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h, dh = _act(self.activation, h @ w + b)
            derivs.append(dh)
        return softmax(h @ self.weights[-1] + self.biases[-1]), derivs

    def forward(self, x) -> np.ndarray:
        """Class probabilities for one input ``(d,)`` or a batch ``(n, d)``."""
        x2, single = self._check(x)
        p, _ = self._forward(x2)
        return p[0] if single else p

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.forward(x), axis=-1)

    def probs_and_grads(self, x, classes) -> tuple[np.ndarray, np.ndarray]:
        """Probabilities ``(n, K)`` and input gradients ``(len(classes), n, d)``."""
        x2, _ = self._check(x)
        p, derivs = self._forward(x2)
        out = np.empty((len(classes),) + x2.shape)
        for k, c in enumerate(classes):
            delta = -p[:, [c]] * p
            delta[:, c] += p[:, c]
            for w, dh in zip(self.weights[:0:-1], derivs[::-1]):
                delta = (delta @ w.T) * dh
            out[k] = delta @ self.weights[0].T
        return p, out

    def input_gradient(self, x, class_index: int) -> np.ndarray:
        """Gradient of the ``class_index`` probability with respect to the input."""
        if not 0 <= class_index < self.num_classes:
            raise DimMismatch(f"class index {class_index} out of range")
        x2, single = self._check(x)
        _, g = self.probs_and_grads(x2, [class_index])
        return g[0, 0] if single else g[0]

    def rotate_inputs(self, q: np.ndarray) -> "Classifier":
        """Classifier ``y -> F(q^T y)``, i.e. the same model in rotated coordinates."""
        ws = [q @ self.weights[0]] + [w.copy() for w in self.weights[1:]]
        return Classifier(ws, [b.copy() for b in self.biases], self.activation)


@dataclass
class TrainConfig:
    sigma_aug: float = 0.25
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.1
    seed: int = 0
    hidden: tuple[int, ...] = field(default=(32, 32))
    activation: str = "tanh"

    def __post_init__(self):
        if self.sigma_aug < 0 or self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError(f"invalid training config {self}")


def train(x: np.ndarray, y: np.ndarray, cfg: TrainConfig, num_classes: int | None = None) -> Classifier:
    """Minibatch SGD on cross-entropy with Gaussian input augmentation.

    Every epoch each example receives a fresh ``N(0, sigma_aug^2 I)``
    perturbation. The result depends only on the data and ``cfg.seed``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.ndim != 2 or len(x) == 0 or len(x) != len(y):
        raise ConfigError(f"bad training data: x {x.shape}, y {y.shape}")
    k = int(num_classes if num_classes is not None else y.max() + 1)
    if y.min() < 0 or y.max() >= k:
        raise ConfigError("labels out of range")

    seq = np.random.SeedSequence(cfg.seed)
    init_seed, run_seed = seq.spawn(2)
    model = Classifier.init([x.shape[1], *cfg.hidden, k], seed=init_seed, activation=cfg.activation)
    rng = np.random.default_rng(run_seed)
    onehot = np.eye(k)[y]
    n = len(x)
    for _ in range(cfg.epochs):
        noise = rng.standard_normal(x.shape) * cfg.sigma_aug
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _sgd_step(model, x[idx] + noise[idx], onehot[idx], cfg.learning_rate)
    return model


def _sgd_step(model: Classifier, xb: np.ndarray, tb: np.ndarray, lr: float) -> None:
    hs = [xb]
    derivs = []
    h = xb
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h, dh = _act(model.activation, h @ w + b)
        hs.append(h)
        derivs.append(dh)
    p = softmax(h @ model.weights[-1] + model.biases[-1])
    delta = (p - tb) / len(xb)
    for i in range(len(model.weights) - 1, -1, -1):
        gw = hs[i].T @ delta
        gb = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * derivs[i - 1]
        model.weights[i] -= lr * gw
        model.biases[i] -= lr * gb


def accuracy(model: Classifier, x, y) -> float:
    return float(np.mean(model.predict(x) == np.asarray(y)))


def save_model(model: Classifier, path) -> None:
    dims = model.layer_dims
    parts = [
        MAGIC + VERSION,
        struct.pack("<I", len(model.weights)),
        struct.pack(f"<{len(dims)}I", *dims),
        struct.pack("<B", ACTIVATIONS[model.activation]),
    ]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> Classifier:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:6] != MAGIC:
        raise FormatError(f"{path}: not a model file")
    if buf[6:8] != VERSION:
        raise FormatError(f"{path}: unsupported model version {buf[6:8]!r}")
    (layers,) = struct.unpack_from("<I", buf, 8)
    off = 12
    need = off + 4 * (layers + 1) + 1
    if layers < 1 or len(buf) < need:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{layers + 1}I", buf, off)
    off += 4 * (layers + 1)
    tag = buf[off]
    off += 1
    if tag not in _TAG_TO_ACT:
        raise FormatError(f"{path}: unknown activation tag {tag}")
    expected = off + 8 * sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if len(buf) != expected:
        raise FormatError(f"{path}: payload has {len(buf)} bytes, expected {expected}")
    ws, bs = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        ws.append(np.frombuffer(buf, "<f8", a * b, off).reshape(a, b).astype(float))
        off += 8 * a * b
        bs.append(np.frombuffer(buf, "<f8", b, off).astype(float))
        off += 8 * b
    return Classifier(ws, bs, _TAG_TO_ACT[tag])
