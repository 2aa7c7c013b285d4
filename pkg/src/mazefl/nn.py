"""From-scratch 1147-256-15 MLP: forward, backprop, SGD with coupled L2, evaluation."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lidar import NUM_RAYS

HIDDEN = 256
NUM_CLASSES = 15
MAGIC = b"MZNN"
VERSION = 1
SHAPES = {"W1": (HIDDEN, NUM_RAYS), "b1": (HIDDEN,), "W2": (NUM_CLASSES, HIDDEN), "b2": (NUM_CLASSES,)}
FIELDS = ("W1", "b1", "W2", "b2")


class EmptyDataset(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h, d = self.W1.shape
        c = self.W2.shape[0]
        if self.b1.shape != (h,) or self.W2.shape != (c, h) or self.b2.shape != (c,):
            raise ValueError("inconsistent MLP parameter shapes")

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(a.shape for a in self.arrays())

    def copy(self) -> "MlpParams":
        return MlpParams(*(a.copy() for a in self.arrays()))

    def __eq__(self, other):
        if not isinstance(other, MlpParams):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    @classmethod
    def zeros(cls, d_in: int = NUM_RAYS, hidden: int = HIDDEN, d_out: int = NUM_CLASSES) -> "MlpParams":
        return cls(np.zeros((hidden, d_in)), np.zeros(hidden), np.zeros((d_out, hidden)), np.zeros(d_out))


def init(seed: int, d_in: int = NUM_RAYS, hidden: int = HIDDEN, d_out: int = NUM_CLASSES) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d_in + hidden))
    lim2 = np.sqrt(6.0 / (hidden + d_out))
    return MlpParams(rng.uniform(-lim1, lim1, (hidden, d_in)), np.zeros(hidden),
                     rng.uniform(-lim2, lim2, (d_out, hidden)), np.zeros(d_out))


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Logits for one sample ``(d,)`` or a batch ``(n, d)``."""
    x = np.asarray(x, dtype=np.float64)
    h = np.maximum(x @ params.W1.T + params.b1, 0.0)
    return h @ params.W2.T + params.b2


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(params: MlpParams, x: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest label
    return np.argmax(forward(params, x), axis=-1)


def loss_and_grad(params: MlpParams, x: np.ndarray, y: np.ndarray,
                  weight_decay: float = 0.0) -> tuple[float, MlpParams]:
    """Mean softmax cross-entropy plus ``weight_decay/2 * (|W1|^2 + |W2|^2)`` and its gradient."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    n = len(y)
    if n == 0:
        raise EmptyDataset("loss of an empty batch")
    z1 = x @ params.W1.T + params.b1
    h = np.maximum(z1, 0.0)
    logits = h @ params.W2.T + params.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    ce = float(np.mean(log_z - shifted[np.arange(n), y]))
    reg = 0.5 * weight_decay * (np.sum(params.W1 ** 2) + np.sum(params.W2 ** 2))

    dlogits = np.exp(shifted - log_z[:, None])
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    dW2 = dlogits.T @ h + weight_decay * params.W2
    db2 = dlogits.sum(axis=0)
    dz1 = (dlogits @ params.W2) * (z1 > 0.0)
    dW1 = dz1.T @ x + weight_decay * params.W1
    db1 = dz1.sum(axis=0)
    return ce + float(reg), MlpParams(dW1, db1, dW2, db2)


def sgd_step(params: MlpParams, grads: MlpParams, lr: float) -> MlpParams:
    return MlpParams(*(p - lr * g for p, g in zip(params.arrays(), grads.arrays())))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    weight_decay: float = 0.001
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    # when set, stop after this many minibatch steps instead of full epochs
    max_steps: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _sgd_inplace(params: MlpParams, grads: MlpParams, lr: float) -> None:
    for p, g in zip(params.arrays(), grads.arrays()):
        p -= lr * g


def train(params: MlpParams, data, config: TrainConfig, log=None) -> MlpParams:
    """Minibatch SGD over shuffled epochs; returns a new parameter set.

    ``data`` is a :class:`~mazefl.dataset.Dataset` or an ``(x, y)`` pair.
    """
    x, y = (data.x, data.y) if hasattr(data, "x") else data
    n = len(y)
    if n == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    params = params.copy()
    steps = 0
    epoch = 0
    while True:
        if config.max_steps is None and epoch >= config.epochs:
            break
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            if config.max_steps is not None and steps >= config.max_steps:
                return params
            idx = order[start:start + config.batch_size]
            _, grads = loss_and_grad(params, x[idx], y[idx], config.weight_decay)
            _sgd_inplace(params, grads, config.learning_rate)
            steps += 1
        epoch += 1
        if log is not None:
            log(epoch, params)
    return params


def evaluate(params: MlpParams, data, chunk: int = 4096) -> tuple[float, np.ndarray]:
    """Accuracy and a 15x15 confusion matrix (rows true label, columns prediction)."""
    x, y = (data.x, data.y) if hasattr(data, "x") else data
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for start in range(0, len(y), chunk):
        pred = predict(params, x[start:start + chunk])
        np.add.at(confusion, (np.asarray(y[start:start + chunk], dtype=np.intp), pred), 1)
    total = confusion.sum()
    accuracy = float(np.trace(confusion) / total) if total else 0.0
    return accuracy, confusion


# --------------------------------------------------------------------------
# MZNN checkpoints: magic, u8 version, then W1, b1, W2, b2 as <f4 row-major


def checkpoint_bytes(params: MlpParams) -> bytes:
    if params.shapes != tuple(SHAPES[f] for f in FIELDS):
        raise CheckpointError("only the 1147-256-15 architecture can be checkpointed")
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in params.arrays())
    return MAGIC + struct.pack("<B", VERSION) + body


def params_from_bytes(buf: bytes) -> MlpParams:
    if len(buf) < 5 or buf[:4] != MAGIC:
        raise CheckpointError("not an MZNN checkpoint")
    if buf[4] != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {buf[4]}")
    sizes = [int(np.prod(SHAPES[f])) for f in FIELDS]
    if len(buf) != 5 + 4 * sum(sizes):
        raise CheckpointError("checkpoint length does not match the architecture")
    flat = np.frombuffer(buf, dtype="<f4", offset=5)
    arrays, off = [], 0
    for f, size in zip(FIELDS, sizes):
        arrays.append(flat[off:off + size].reshape(SHAPES[f]).astype(np.float64))
        off += size
    return MlpParams(*arrays)


def to_wire(params: MlpParams) -> MlpParams:
    """Round parameters through float32 exactly as a checkpoint would."""
    return MlpParams(*(a.astype(np.float32).astype(np.float64) for a in params.arrays()))


def save_checkpoint(params: MlpParams, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def load_checkpoint(path) -> MlpParams:
    return params_from_bytes(Path(path).read_bytes())
