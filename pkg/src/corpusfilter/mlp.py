"""Single-hidden-layer classifier over document embeddings.

768 -> 256 (ReLU, 20% inverted dropout) -> 1 (sigmoid), trained with AdamW
at a constant learning rate on binary cross-entropy. Weights are float32;
loss bookkeeping and the gradient-check harness run in float64. Inference
applies no dropout and no rescaling, so two passes over the same rows are
bit-identical.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import ConfigError, DataError, TrainingError
from .scores import ScoreTable
from .trainset import POSITIVE, LabeledSample

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

_MODEL_MAGIC = b"MLPX1"
_MODEL_VERSION = 1


@dataclass
class MlpConfig:
    """Architecture and optimization settings."""

    input_dim: int = 768
    hidden_dim: int = 256
    epochs: int = 6
    lr: float = 3e-4
    dropout: float = 0.2
    batch_size: int = 256
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class MlpModel:
    """Trained weights; W1 is (hidden, input), W2 is (1, hidden)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    train_meta: dict = field(default_factory=dict)

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    def forward_batch(
        self,
        X: np.ndarray,
        dropout: float = 0.0,
        dropout_rng: Optional[np.random.Generator] = None,
    ) -> np.ndarray:
        """Sigmoid outputs for a (n, input_dim) batch.

        Passing a dropout rng applies inverted dropout to the hidden layer
        (training behaviour); without it the pass is plain inference.
        """
        X = np.asarray(X)
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite value in forward-pass input")
        z1 = X @ self.W1.T + self.b1
        a = np.maximum(z1, 0.0)
        if dropout_rng is not None and dropout > 0.0:
            keep = 1.0 - dropout
            mask = dropout_rng.random(a.shape) < keep
            a = a * mask / np.asarray(keep, dtype=a.dtype)
        z2 = a @ self.W2.T + self.b2
        return _sigmoid(z2[:, 0])

    def save(self, path: PathLike) -> None:
        path = Path(path)
        header = {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "train_meta": self.train_meta,
        }
        blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_MODEL_MAGIC)
            fh.write(struct.pack("<II", _MODEL_VERSION, len(blob)))
            fh.write(blob)
            for arr in (self.W1, self.b1, self.W2, self.b2):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: PathLike) -> "MlpModel":
        path = Path(path)
        with open(path, "rb") as fh:
            if fh.read(5) != _MODEL_MAGIC:
                raise DataError(f"{path}: not an MLP model file (bad magic)")
            version, blob_len = struct.unpack("<II", fh.read(8))
            if version != _MODEL_VERSION:
                raise DataError(f"{path}: unsupported model version {version}")
            header = json.loads(fh.read(blob_len).decode("utf-8"))
            d_in = int(header["input_dim"])
            d_h = int(header["hidden_dim"])

            def read_arr(shape):
                n = int(np.prod(shape))
                raw = fh.read(n * 4)
                if len(raw) != n * 4:
                    raise DataError(f"{path}: truncated weights")
                return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

            W1 = read_arr((d_h, d_in))
            b1 = read_arr((d_h,))
            W2 = read_arr((1, d_h))
            b2 = read_arr((1,))
        return cls(W1=W1, b1=b1, W2=W2, b2=b2, train_meta=header.get("train_meta", {}))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos].astype(np.float64)))
    ez = np.exp(z[~pos].astype(np.float64))
    out[~pos] = ez / (1.0 + ez)
    return out


def mlp_forward(
    model: MlpModel,
    x: np.ndarray,
    mode: str = "infer",
    dropout_rng: Optional[np.random.Generator] = None,
    dropout: float = 0.2,
) -> float:
    """Score one embedding vector; mode "train" applies inverted dropout."""
    x = np.asarray(x, dtype=model.W1.dtype)
    if x.shape != (model.input_dim,):
        raise DataError(f"input has shape {x.shape}, expected ({model.input_dim},)")
    if mode == "train":
        if dropout_rng is None:
            raise ConfigError("train-mode forward needs a dropout rng")
        return float(model.forward_batch(x[None, :], dropout=dropout, dropout_rng=dropout_rng)[0])
    if mode != "infer":
        raise ConfigError(f"unknown forward mode {mode!r}")
    return float(model.forward_batch(x[None, :])[0])


def _init_model(cfg: MlpConfig, rng: np.random.Generator) -> MlpModel:
    # Uniform fan-in scaling, the same rule for weights and biases.
    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return (rng.random(shape, dtype=np.float32) * 2.0 - 1.0) * np.float32(bound)

    return MlpModel(
        W1=uniform((cfg.hidden_dim, cfg.input_dim), cfg.input_dim),
        b1=uniform((cfg.hidden_dim,), cfg.input_dim),
        W2=uniform((1, cfg.hidden_dim), cfg.hidden_dim),
        b2=uniform((1,), cfg.hidden_dim),
    )


def bce_loss_and_grads(
    params: Dict[str, np.ndarray],
    X: np.ndarray,
    y: np.ndarray,
    dropout_mask: Optional[np.ndarray] = None,
    keep: float = 1.0,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean binary cross-entropy and analytic gradients for all parameters.

    Runs in the dtype of the supplied parameters; the gradient-check
    harness passes float64 copies with dropout disabled.
    """
    W1, b1, W2, b2 = params["W1"], params["b1"], params["W2"], params["b2"]
    n = X.shape[0]
    z1 = X @ W1.T + b1
    a = np.maximum(z1, 0.0)
    if dropout_mask is not None:
        a = a * dropout_mask / np.asarray(keep, dtype=a.dtype)
    z2 = (a @ W2.T + b2)[:, 0]
    # softplus(z) - y*z, stable for large |z|
    loss = float(np.mean(np.maximum(z2, 0.0) - y * z2 + np.log1p(np.exp(-np.abs(z2)))))
    p = _sigmoid(z2).astype(z2.dtype)
    dz2 = ((p - y) / n)[:, None]
    gW2 = dz2.T @ a
    gb2 = dz2.sum(axis=0)
    da = dz2 @ W2
    if dropout_mask is not None:
        da = da * dropout_mask / np.asarray(keep, dtype=da.dtype)
    dz1 = da * (z1 > 0)
    gW1 = dz1.T @ X
    gb1 = dz1.sum(axis=0)
    return loss, {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def train_mlp_arrays(X: np.ndarray, y: np.ndarray, cfg: MlpConfig) -> MlpModel:
    """Train on a (n, input_dim) float32 matrix with 0/1 labels."""
    cfg.validate()
    X = np.ascontiguousarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise DataError(f"training matrix has shape {X.shape}, expected (n, {cfg.input_dim})")
    if set(np.unique(y).tolist()) - {0.0, 1.0}:
        raise DataError("labels must be 0 or 1")
    if len(set(np.unique(y).tolist())) < 2:
        raise TrainingError("training data must contain both labels")

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    model = _init_model(cfg, rng)
    params = {"W1": model.W1, "b1": model.b1, "W2": model.W2, "b2": model.b2}
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    keep = 1.0 - cfg.dropout

    n = X.shape[0]
    step = 0
    epoch_losses: List[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            mask = None
            if cfg.dropout > 0.0:
                mask = (rng.random((len(batch), cfg.hidden_dim)) < keep).astype(np.float32)
            loss, grads = bce_loss_and_grads(
                params, X[batch], y[batch], dropout_mask=mask, keep=keep
            )
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite training loss in epoch {epoch + 1}")
            total_loss += loss * len(batch)
            step += 1
            bc1 = 1.0 - cfg.beta1**step
            bc2 = 1.0 - cfg.beta2**step
            for k, p in params.items():
                g = grads[k]
                m_state[k] = cfg.beta1 * m_state[k] + (1.0 - cfg.beta1) * g
                v_state[k] = cfg.beta2 * v_state[k] + (1.0 - cfg.beta2) * g * g
                m_hat = m_state[k] / bc1
                v_hat = v_state[k] / bc2
                p -= (cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps)
                                + cfg.weight_decay * p)).astype(np.float32)
        epoch_losses.append(total_loss / n)

    model.train_meta = {
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "dropout": cfg.dropout,
        "batch_size": cfg.batch_size,
        "adamw": {"beta1": cfg.beta1, "beta2": cfg.beta2, "eps": cfg.eps,
                  "weight_decay": cfg.weight_decay},
        "seed": cfg.seed,
        "samples": int(n),
        "epoch_losses": epoch_losses,
    }
    return model


def train_mlp(
    samples: Sequence[LabeledSample],
    matrix: EmbeddingMatrix,
    cfg: Optional[MlpConfig] = None,
) -> MlpModel:
    """Train from labeled samples whose embeddings live in `matrix`."""
    cfg = cfg or MlpConfig()
    if matrix.dim != cfg.input_dim:
        raise DataError(f"embedding dim {matrix.dim} does not match model input {cfg.input_dim}")
    index = matrix.index()
    rows = []
    labels = []
    for s in samples:
        if s.id not in index:
            raise DataError(f"no embedding for training sample {s.id!r}")
        rows.append(index[s.id])
        labels.append(1.0 if s.label == POSITIVE else 0.0)
    X = matrix.vectors[np.asarray(rows, dtype=np.int64)]
    y = np.asarray(labels, dtype=np.float32)
    return train_mlp_arrays(X, y, cfg)


def score_mlp(
    model: MlpModel,
    matrix: EmbeddingMatrix,
    config_hash: str = "",
    batch_size: int = 8192,
) -> ScoreTable:
    """One sigmoid score per embedding row, in id order."""
    if matrix.dim != model.input_dim:
        raise DataError(f"embedding dim {matrix.dim} does not match model input {model.input_dim}")
    parts = [
        model.forward_batch(matrix.vectors[i : i + batch_size])
        for i in range(0, len(matrix), batch_size)
    ]
    scores = np.concatenate(parts) if parts else np.empty(0, dtype=np.float64)
    return ScoreTable(ids=list(matrix.ids), scores=scores, scorer="mlp",
                      config_hash=config_hash)
