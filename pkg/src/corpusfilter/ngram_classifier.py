"""Hashed n-gram linear text classifier, trained from scratch.

The model averages embeddings of word (or character) unigrams and hashed
higher-order n-grams into a document vector and applies a two-way softmax
head with no bias terms. Training is single-threaded SGD with a linearly
decaying learning rate, so a fixed seed reproduces the model exactly.
Scoring collapses the embedding and output matrices into one weight per
feature, which reduces a document score to a gather, a mean, and a
sigmoid; a jitted kernel exploits that for bulk scoring.

Index 0 of the softmax head is the positive class; a score is the
probability that a document belongs to it.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .corpus_io import WHITESPACE_SET, tokenize
from .errors import ConfigError, DataError, TrainingError
from .hashing import NGRAM_SEP, fnv1a_64_batch, ngram_fingerprint
from .trainset import NEGATIVE, POSITIVE, LabeledSample

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

_MODEL_MAGIC = b"NGQF1"
_MODEL_VERSION = 1

# Scripts without whitespace word boundaries get character tokens, making
# "4-gram" well-defined there.
CHARACTER_SCRIPTS = frozenset({"Hani", "Hans", "Hant", "Jpan", "Kana", "Hira", "Thai"})

_NEWLINE_TABLE = str.maketrans({"\n": " ", "\r": " "})


@dataclass
class NgramTokenizerConfig:
    """How raw text becomes the token stream the classifier sees."""

    mode: str = "whitespace"  # "whitespace" or "character"
    ngram_order: int = 2
    min_count: int = 1
    lowercase: bool = False

    def validate(self) -> None:
        if self.mode not in ("whitespace", "character"):
            raise ConfigError(f"unknown tokenizer mode {self.mode!r}")
        if not (1 <= self.ngram_order <= 8):
            raise ConfigError(f"ngram_order must be in [1, 8], got {self.ngram_order}")
        if self.min_count < 0:
            raise ConfigError(f"min_count must be >= 0, got {self.min_count}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "NgramTokenizerConfig":
        cfg = cls(**obj)
        cfg.validate()
        return cfg


@dataclass
class TrainConfig:
    """Optimization settings for one training run."""

    epochs: int = 5
    lr: float = 0.1
    dim: int = 100
    bucket_count: int = 2_000_000
    seed: int = 1

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.dim < 1 or self.bucket_count < 1:
            raise ConfigError("dim and bucket_count must be positive")


# Replaces the upstream library's opaque auto-tuning with fixed presets.
PRESETS: Dict[str, dict] = {
    "default": {
        "tokenizer": NgramTokenizerConfig(mode="whitespace", ngram_order=2, min_count=1),
        "train": TrainConfig(epochs=5, lr=0.1),
    },
    "character": {
        "tokenizer": NgramTokenizerConfig(mode="character", ngram_order=4, min_count=0),
        "train": TrainConfig(epochs=30, lr=0.1),
    },
}


def preset_for_language(lang: str) -> str:
    """Preset name for a language code like "cmn_Hani" or "dan_Latn"."""
    script = lang.rsplit("_", 1)[-1] if "_" in lang else ""
    return "character" if script in CHARACTER_SCRIPTS else "default"


def prepare_text(text: str, cfg: NgramTokenizerConfig) -> List[str]:
    """Newline removal, optional lowercasing, and tokenization."""
    text = text.translate(_NEWLINE_TABLE)
    if cfg.lowercase:
        text = text.lower()
    if cfg.mode == "character":
        return [ch for ch in text if ch not in WHITESPACE_SET]
    return tokenize(text)


def featurize(
    tokens: Sequence[str],
    vocab: Dict[str, int],
    cfg: NgramTokenizerConfig,
    bucket_count: int,
) -> List[int]:
    """Feature indices for a token list: in-vocab unigrams first, then
    hashed n-grams of orders 2..ngram_order in position order."""
    feats = [idx for idx in map(vocab.get, tokens) if idx is not None]
    nvocab = len(vocab)
    for n in range(2, cfg.ngram_order + 1):
        count = len(tokens) - n + 1
        if count <= 0:
            continue
        if count > 64:
            join = NGRAM_SEP.join
            hashes = fnv1a_64_batch(
                join(tokens[i : i + n]).encode("utf-8") for i in range(count)
            )
            buckets = (hashes % np.uint64(bucket_count)).astype(np.int64)
            feats.extend((buckets + nvocab).tolist())
        else:
            for i in range(count):
                feats.append(nvocab + ngram_fingerprint(tokens[i : i + n]) % bucket_count)
    return feats


def build_vocab(token_lists: Iterable[Sequence[str]], min_count: int) -> Dict[str, int]:
    """Tokens seen at least max(min_count, 1) times, most frequent first."""
    counts: Dict[str, int] = {}
    for tokens in token_lists:
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
    threshold = max(min_count, 1)
    kept = sorted((t for t, c in counts.items() if c >= threshold),
                  key=lambda t: (-counts[t], t))
    return {t: i for i, t in enumerate(kept)}


@dataclass
class NgramModel:
    """A trained classifier: tokenizer, vocab, and weight matrices."""

    tokenizer: NgramTokenizerConfig
    vocab: Dict[str, int]
    bucket_count: int
    dim: int
    input_embeddings: np.ndarray  # (len(vocab)+bucket_count, dim) float32
    output_weights: np.ndarray  # (2, dim) float32
    train_meta: dict = field(default_factory=dict)
    _score_weights: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def score_weights(self) -> np.ndarray:
        """Per-feature float64 weight whose mean, through a sigmoid, is the
        positive-class probability. Computed once and cached."""
        if self._score_weights is None:
            diff = (self.output_weights[0].astype(np.float64)
                    - self.output_weights[1].astype(np.float64))
            rows = self.input_embeddings.shape[0]
            w = np.empty(rows, dtype=np.float64)
            block = 262_144
            for start in range(0, rows, block):
                stop = min(start + block, rows)
                w[start:stop] = self.input_embeddings[start:stop].astype(np.float64) @ diff
            self._score_weights = w
        return self._score_weights

    def features(self, text: str) -> List[int]:
        return featurize(prepare_text(text, self.tokenizer), self.vocab,
                         self.tokenizer, self.bucket_count)

    def score(self, text: str) -> float:
        """Positive-class probability for one text."""
        feats = self.features(text)
        if not feats:
            return 0.5
        w = self.score_weights()
        total = 0.0
        for f in feats:
            total += w[f]
        return _sigmoid(total / len(feats))

    def predict_proba(self, text: str) -> Tuple[float, float]:
        p = self.score(text)
        return p, 1.0 - p

    # ---- serialization ----

    def save(self, path: PathLike) -> None:
        path = Path(path)
        header = {
            "tokenizer": self.tokenizer.to_dict(),
            "dim": self.dim,
            "bucket_count": self.bucket_count,
            "vocab_size": len(self.vocab),
            "train_meta": self.train_meta,
        }
        header_blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
        tokens = [""] * len(self.vocab)
        for t, i in self.vocab.items():
            tokens[i] = t
        with open(path, "wb") as fh:
            fh.write(_MODEL_MAGIC)
            fh.write(struct.pack("<II", _MODEL_VERSION, len(header_blob)))
            fh.write(header_blob)
            for t in tokens:
                raw = t.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
            fh.write(np.ascontiguousarray(self.input_embeddings, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(self.output_weights, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: PathLike) -> "NgramModel":
        path = Path(path)
        with open(path, "rb") as fh:
            magic = fh.read(5)
            if magic != _MODEL_MAGIC:
                raise DataError(f"{path}: not an n-gram model file (bad magic)")
            version, header_len = struct.unpack("<II", fh.read(8))
            if version != _MODEL_VERSION:
                raise DataError(f"{path}: unsupported model version {version}")
            header = json.loads(fh.read(header_len).decode("utf-8"))
            tokenizer = NgramTokenizerConfig.from_dict(header["tokenizer"])
            dim = int(header["dim"])
            bucket_count = int(header["bucket_count"])
            vocab_size = int(header["vocab_size"])
            vocab: Dict[str, int] = {}
            for i in range(vocab_size):
                (tlen,) = struct.unpack("<I", fh.read(4))
                vocab[fh.read(tlen).decode("utf-8")] = i
            rows = vocab_size + bucket_count
            emb_bytes = fh.read(rows * dim * 4)
            if len(emb_bytes) != rows * dim * 4:
                raise DataError(f"{path}: truncated embedding matrix")
            out_bytes = fh.read(2 * dim * 4)
            if len(out_bytes) != 2 * dim * 4:
                raise DataError(f"{path}: truncated output weights")
            emb = np.frombuffer(emb_bytes, dtype="<f4").reshape(rows, dim).copy()
            out = np.frombuffer(out_bytes, dtype="<f4").reshape(2, dim).copy()
            if not (np.all(np.isfinite(emb)) and np.all(np.isfinite(out))):
                raise DataError(f"{path}: model contains non-finite weights")
        return cls(
            tokenizer=tokenizer, vocab=vocab, bucket_count=bucket_count, dim=dim,
            input_embeddings=emb, output_weights=out,
            train_meta=header.get("train_meta", {}),
        )


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _label_index(label: str) -> int:
    return 0 if label == POSITIVE else 1


def softmax_loss_and_grads(
    emb: np.ndarray,
    out: np.ndarray,
    features: Sequence[int],
    label_idx: int,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Loss, d/d(output weights), and d/d(hidden) for one sample.

    Works in whatever dtype the inputs carry; the gradient-check harness
    calls it with float64 copies.
    """
    dtype = emb.dtype
    if len(features):
        hidden = emb[np.asarray(features, dtype=np.int64)].mean(axis=0)
    else:
        hidden = np.zeros(emb.shape[1], dtype=dtype)
    logits = out @ hidden
    shift = logits - logits.max()
    exp = np.exp(shift)
    probs = exp / exp.sum()
    loss = -float(np.log(probs[label_idx]))
    g_logits = probs.copy()
    g_logits[label_idx] -= 1.0
    g_out = np.outer(g_logits, hidden)
    g_hidden = out.T @ g_logits
    return loss, g_out, g_hidden


def train_ngram(
    samples: Sequence[LabeledSample],
    tokenizer: NgramTokenizerConfig,
    cfg: TrainConfig,
) -> NgramModel:
    """Train on labeled samples with per-sample SGD.

    The learning rate decays linearly from cfg.lr to zero over
    epochs * len(samples) processed samples; sample order is reshuffled
    each epoch from the seeded generator. Per-epoch mean losses land in
    train_meta["epoch_losses"].
    """
    tokenizer.validate()
    cfg.validate()
    labels = {s.label for s in samples}
    if len(labels) < 2:
        raise TrainingError(
            f"training data must contain both labels, found only {sorted(labels)}"
        )

    token_lists = [prepare_text(s.text, tokenizer) for s in samples]
    vocab = build_vocab(token_lists, tokenizer.min_count)
    feature_lists = [
        np.asarray(featurize(toks, vocab, tokenizer, cfg.bucket_count), dtype=np.int64)
        for toks in token_lists
    ]
    label_idx = np.fromiter((_label_index(s.label) for s in samples), dtype=np.int64,
                            count=len(samples))

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    rows = len(vocab) + cfg.bucket_count
    emb = (rng.random((rows, cfg.dim), dtype=np.float32) * 2.0 - 1.0) / cfg.dim
    out = np.zeros((2, cfg.dim), dtype=np.float32)

    n = len(samples)
    total = cfg.epochs * n
    processed = 0
    epoch_losses: List[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for si in order:
            lr_t = cfg.lr * max(0.0, 1.0 - processed / total)
            processed += 1
            feats = feature_lists[si]
            loss, g_out, g_hidden = softmax_loss_and_grads(
                emb, out, feats, int(label_idx[si])
            )
            epoch_loss += loss
            out -= lr_t * g_out.astype(np.float32)
            if len(feats):
                np.add.at(emb, feats, -(lr_t / len(feats)) * g_hidden.astype(np.float32))
        mean_loss = epoch_loss / n
        if not math.isfinite(mean_loss):
            raise TrainingError(f"non-finite training loss in epoch {epoch + 1}")
        epoch_losses.append(mean_loss)

    return NgramModel(
        tokenizer=tokenizer,
        vocab=vocab,
        bucket_count=cfg.bucket_count,
        dim=cfg.dim,
        input_embeddings=emb,
        output_weights=out,
        train_meta={
            "epochs": cfg.epochs,
            "lr": cfg.lr,
            "seed": cfg.seed,
            "samples": n,
            "epoch_losses": epoch_losses,
        },
    )


def score_ngram(model: NgramModel, doc_or_text) -> float:
    """Positive-class probability of a document or raw text."""
    text = doc_or_text if isinstance(doc_or_text, str) else doc_or_text.text
    return model.score(text)


def evaluate_accuracy(model: NgramModel, samples: Sequence[LabeledSample]) -> float:
    if not samples:
        raise DataError("cannot evaluate on an empty sample set")
    correct = 0
    for s in samples:
        predicted = POSITIVE if model.score(s.text) >= 0.5 else NEGATIVE
        correct += predicted == s.label
    return correct / len(samples)


def grid_search(
    train: Sequence[LabeledSample],
    heldout: Sequence[LabeledSample],
    tokenizer: NgramTokenizerConfig,
    cfg: TrainConfig,
    lrs: Sequence[float] = (0.05, 0.1, 0.25),
    epochs: Sequence[int] = (5, 10),
    orders: Sequence[int] = (1, 2),
) -> Tuple[NgramModel, List[dict]]:
    """Small documented grid over {lr, epochs, order}; best held-out accuracy wins."""
    results: List[dict] = []
    best: Optional[Tuple[float, NgramModel]] = None
    for order in orders:
        tok = NgramTokenizerConfig(mode=tokenizer.mode, ngram_order=order,
                                   min_count=tokenizer.min_count,
                                   lowercase=tokenizer.lowercase)
        for lr in lrs:
            for ep in epochs:
                run_cfg = TrainConfig(epochs=ep, lr=lr, dim=cfg.dim,
                                      bucket_count=cfg.bucket_count, seed=cfg.seed)
                model = train_ngram(train, tok, run_cfg)
                acc = evaluate_accuracy(model, heldout)
                results.append({"order": order, "lr": lr, "epochs": ep, "accuracy": acc})
                if best is None or acc > best[0]:
                    best = (acc, model)
    assert best is not None
    return best[1], results
