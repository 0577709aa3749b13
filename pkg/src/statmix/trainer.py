"""Small numpy classifiers trained with heavy-ball SGD and a cosine schedule.

These stand in for the convolutional networks of the full-scale experiments;
they exist so the augmentation pipeline can be exercised end to end on a
laptop.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODELS = ("linear", "mlp")


class TrainingError(RuntimeError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    model: str = "linear"
    hidden_units: int = 64
    lr0: float = 0.01
    momentum: float = 0.9
    epochs_total: int = 20
    init_scale: float = 1.0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigurationError(f"unknown model {self.model!r}; choose from {MODELS}")
        if not self.lr0 > 0:
            raise ConfigurationError(f"lr0 must be positive, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.model == "mlp" and self.hidden_units < 1:
            raise ConfigurationError(f"hidden_units must be >= 1, got {self.hidden_units}")
        if self.epochs_total < 1:
            raise ConfigurationError(f"epochs_total must be >= 1, got {self.epochs_total}")


@dataclass
class ModelState:
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray]
    model: str = "linear"
    step: int = 0
    epoch: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.params["W1" if self.model == "mlp" else "W"].shape[0]

    @property
    def num_classes(self) -> int:
        return self.params["b2" if self.model == "mlp" else "b"].shape[0]


def cosine_lr(epoch: float, lr0: float, T: int) -> float:
    """Cosine annealing from ``lr0`` at epoch 0 to exactly 0 at epoch ``T``."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0 <= epoch <= T:
        raise ValueError(f"epoch {epoch} outside [0, {T}]")
    if epoch == T:
        return 0.0
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / T))


def init_model(cfg: TrainerConfig, input_dim: int, num_classes: int, rng: np.random.Generator) -> ModelState:
    def uniform(fan_in, shape):
        s = cfg.init_scale / math.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    if cfg.model == "linear":
        params = {"W": uniform(input_dim, (input_dim, num_classes)), "b": np.zeros(num_classes)}
    else:
        h = cfg.hidden_units
        params = {
            "W1": uniform(input_dim, (input_dim, h)),
            "b1": np.zeros(h),
            "W2": uniform(h, (h, num_classes)),
            "b2": np.zeros(num_classes),
        }
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    return ModelState(params, velocity, cfg.model)


def _flatten(state: ModelState, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    if X.shape[1] != state.input_dim:
        raise ConfigurationError(
            f"model expects {state.input_dim} inputs per image, got {X.shape[1]}"
        )
    return X


def logits(state: ModelState, X: np.ndarray) -> np.ndarray:
    X = _flatten(state, X)
    p = state.params
    if state.model == "linear":
        return X @ p["W"] + p["b"]
    return np.tanh(X @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss(state: ModelState, X: np.ndarray, y: np.ndarray) -> float:
    """Mean cross-entropy."""
    logp = _log_softmax(logits(state, X))
    return float(-logp[np.arange(len(y)), y].mean())


def loss_and_grads(state: ModelState, X: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    X = _flatten(state, X)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    p = state.params
    if state.model == "linear":
        z = X @ p["W"] + p["b"]
    else:
        a = np.tanh(X @ p["W1"] + p["b1"])
        z = a @ p["W2"] + p["b2"]
    logp = _log_softmax(z)
    value = float(-logp[np.arange(n), y].mean())

    dz = np.exp(logp)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    if state.model == "linear":
        return value, {"W": X.T @ dz, "b": dz.sum(axis=0)}
    da = (dz @ p["W2"].T) * (1.0 - a * a)
    return value, {
        "W1": X.T @ da,
        "b1": da.sum(axis=0),
        "W2": a.T @ dz,
        "b2": dz.sum(axis=0),
    }


def sgd_momentum_step(state: ModelState, grads: dict[str, np.ndarray], lr: float, momentum: float) -> ModelState:
    """Heavy-ball update: ``v <- momentum * v + g``; ``w <- w - lr * v``."""
    params, velocity = {}, {}
    for name, w in state.params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != w.shape:
            raise TrainingError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        if not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in tensor {name}")
        v = momentum * state.velocity[name] + g
        new_w = w - lr * v
        if not np.isfinite(new_w).all():
            raise TrainingError(f"tensor {name} became non-finite after the update")
        params[name], velocity[name] = new_w, v
    return ModelState(params, velocity, state.model, state.step + 1, state.epoch, state.history)


def train_epoch(state: ModelState, batches, lr: float, momentum: float) -> ModelState:
    """One pass over ``batches`` (an iterable of ``(pixels, labels)``) at a fixed lr."""
    losses = []
    for X, y in batches:
        value, grads = loss_and_grads(state, X, y)
        losses.append(value)
        state = sgd_momentum_step(state, grads, lr, momentum)
    state.epoch += 1
    state.history = state.history + [float(np.mean(losses)) if losses else float("nan")]
    return state


def evaluate(state: ModelState, test) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class index.

    ``test`` is a Dataset or an ``(pixels, labels)`` pair.
    """
    if hasattr(test, "pixels") and hasattr(test, "labels"):
        X, y = test.pixels, test.labels
    else:
        X, y = test
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty test set")
    pred = np.argmax(logits(state, X), axis=1)
    return float(np.count_nonzero(pred == y)) / len(y)


_CKPT_MAGIC = b"STMC"


def save_checkpoint(state: ModelState, path) -> None:
    """Flat little-endian f32 dump: magic, tensor count, then per tensor
    (name length, name, ndim, dims, data)."""
    out = bytearray(_CKPT_MAGIC + struct.pack("<I", len(state.params)))
    for name, w in state.params.items():
        raw = name.encode()
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<I", w.ndim) + struct.pack(f"<{w.ndim}I", *w.shape)
        out += np.asarray(w, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (count,), pos = struct.unpack_from("<I", data, 4), 8
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 4 * size
    return tensors
