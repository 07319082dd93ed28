"""Target classifier: one hidden ReLU layer of 64 units and a softmax output.

Everything is plain numpy with hand-written backprop, so input gradients are
exact and can be checked against finite differences.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, TrainingError, UsageError
from .numerics import log_sum_exp

HIDDEN = 64
MAGIC = b"MXMLP\x00\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIIII")


@dataclass
class MlpClassifier:
    W1: np.ndarray  # (hidden, D)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (C, hidden)
    b2: np.ndarray  # (C,)

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def n_classes(self) -> int:
        return self.W2.shape[0]

    @classmethod
    def zeros(cls, input_dim: int, n_classes: int, hidden: int = HIDDEN) -> "MlpClassifier":
        return cls(np.zeros((hidden, input_dim)), np.zeros(hidden),
                   np.zeros((n_classes, hidden)), np.zeros(n_classes))

    @classmethod
    def glorot(cls, input_dim: int, n_classes: int, rng, hidden: int = HIDDEN):
        a1 = math.sqrt(6.0 / (input_dim + hidden))
        a2 = math.sqrt(6.0 / (hidden + n_classes))
        return cls(rng.uniform(-a1, a1, size=(hidden, input_dim)), np.zeros(hidden),
                   rng.uniform(-a2, a2, size=(n_classes, hidden)), np.zeros(n_classes))

    def params(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        h = np.maximum(X @ self.W1.T + self.b1, 0.0)
        return h @ self.W2.T + self.b2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise UsageError("epochs must be >= 1")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")


@dataclass
class TrainReport:
    train_accuracy: float
    test_accuracy: float | None
    initial_loss: float
    final_loss: float
    loss_history: list[float] = field(default_factory=list)


def predict_proba(model: MlpClassifier, x) -> np.ndarray:
    z = model.logits(x)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: MlpClassifier, x):
    """Class index (or array of indices for a batch); ties go to the lowest class."""
    out = np.argmax(model.logits(x), axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def loss_and_input_grad(model: MlpClassifier, x, y):
    """Cross-entropy loss of ``x`` against class ``y`` and its gradient in ``x``.

    ``x`` may be a single vector or a ``(B, D)`` batch (then ``y`` is a
    length-B array and the loss comes back per row). Relaxed one-hot blocks
    are fine: the network takes any real vector.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    Y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    if len(Y) == 1 and len(X) > 1:
        Y = np.repeat(Y, len(X))

    pre = X @ model.W1.T + model.b1
    h = np.maximum(pre, 0.0)
    z = h @ model.W2.T + model.b2
    lse = log_sum_exp(z, axis=1)
    rows = np.arange(len(X))
    loss = lse - z[rows, Y]
    dz = np.exp(z - lse[:, None])
    dz[rows, Y] -= 1.0
    dh = dz @ model.W2
    dh[pre <= 0.0] = 0.0
    grad = dh @ model.W1
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def _batch_grads(model: MlpClassifier, X, Y):
    pre = X @ model.W1.T + model.b1
    h = np.maximum(pre, 0.0)
    z = h @ model.W2.T + model.b2
    lse = log_sum_exp(z, axis=1)
    rows = np.arange(len(X))
    loss = float(np.mean(lse - z[rows, Y]))
    dz = np.exp(z - lse[:, None])
    dz[rows, Y] -= 1.0
    dz /= len(X)
    dW2 = dz.T @ h
    db2 = dz.sum(axis=0)
    dh = dz @ model.W2
    dh[pre <= 0.0] = 0.0
    dW1 = dh.T @ X
    db1 = dh.sum(axis=0)
    return loss, [dW1, db1, dW2, db2]


def mean_loss(model: MlpClassifier, X, Y) -> float:
    z = model.logits(X)
    return float(np.mean(log_sum_exp(z, axis=1) - z[np.arange(len(X)), Y]))


def accuracy(model: MlpClassifier, X, Y) -> float:
    return float(np.mean(predict(model, X) == np.asarray(Y)))


def train(X, y, config: TrainConfig = TrainConfig(), X_test=None, y_test=None,
          n_classes: int | None = None):
    """Fit the MLP with mini-batch Adam. Deterministic for a fixed seed.

    Returns ``(model, report)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.intp)
    if len(X) != len(y) or len(X) == 0:
        raise UsageError("training inputs and labels must be non-empty and equal length")
    if len(np.unique(y)) < 2:
        raise UsageError("training labels contain fewer than 2 classes")
    C = n_classes or int(y.max()) + 1
    rng = np.random.default_rng(config.seed)
    model = MlpClassifier.glorot(X.shape[1], C, rng)

    m = [np.zeros_like(p) for p in model.params()]
    v = [np.zeros_like(p) for p in model.params()]
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps
    t = 0
    initial = mean_loss(model, X, y)
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(len(X))
        for start in range(0, len(X), config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grads = _batch_grads(model, X[idx], y[idx])
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite training loss at epoch {epoch + 1}; "
                    f"try a learning rate below {lr:g}"
                )
            t += 1
            for p, g, mi, vi in zip(model.params(), grads, m, v):
                mi *= b1
                mi += (1 - b1) * g
                vi *= b2
                vi += (1 - b2) * g * g
                mhat = mi / (1 - b1 ** t)
                vhat = vi / (1 - b2 ** t)
                p -= lr * mhat / (np.sqrt(vhat) + eps)
        epoch_loss = mean_loss(model, X, y)
        if not math.isfinite(epoch_loss) or not all(np.all(np.isfinite(p)) for p in model.params()):
            raise TrainingError(
                f"parameters diverged at epoch {epoch + 1}; try a learning rate below {lr:g}"
            )
        history.append(epoch_loss)

    test_acc = None
    if X_test is not None and y_test is not None and len(X_test):
        test_acc = accuracy(model, X_test, y_test)
    report = TrainReport(accuracy(model, X, y), test_acc, initial, history[-1], history)
    return model, report


def save(model: MlpClassifier, path) -> None:
    """Little-endian binary: header (magic, version, D, hidden, C) then W1, b1, W2, b2."""
    hidden, D = model.W1.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, D, hidden, model.n_classes))
        for p in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load(path) -> MlpClassifier:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated model header")
    magic, version, D, hidden, C = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    shapes = [(hidden, D), (hidden,), (C, hidden), (C,)]
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    arrays, off = [], _HEADER.size
    for s in shapes:
        count = int(np.prod(s))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off)
                      .astype(float).reshape(s))
        off += 8 * count
    return MlpClassifier(*arrays)
