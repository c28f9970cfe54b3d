"""Tokenization, pluggable text encoders, and video frame handling.

The retrieval encoder, the cluster encoder, and the noise-scoring encoder all
share one tokenizer and one feature-hashing scheme but own separate weights.
Text embeddings live in R^o, internal noise-scorer features in R^d.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    DegenerateInputError, DimensionError, Matrix, Parameter,
    add, dropout, matmul, tanh,
)

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class SpecialTokens:
    """Reserved sequence markers; the tokenizer can never emit them from raw text."""
    cls: str = "[CLS]"
    sep: str = "[SEP]"


SPECIAL = SpecialTokens()


def tokenize(raw: str) -> list[str]:
    """Lowercase, strip punctuation, split on the remains. Deterministic."""
    return _TOKEN_RE.findall(raw.lower())


@dataclass
class TextItem:
    text_id: str
    raw: str
    tokens: list[str]
    video_id: str

    @classmethod
    def from_raw(cls, text_id: str, raw: str, video_id: str) -> "TextItem":
        return cls(text_id=text_id, raw=raw, tokens=tokenize(raw), video_id=video_id)


@dataclass
class VideoItem:
    video_id: str
    frames: np.ndarray  # (T', o) float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DimensionError(f"video {self.video_id}: frames must be (T', o) with T' >= 1")


@dataclass
class EncoderConfig:
    vocab_buckets: int = 4096
    embed_dim: int = 32       # o: shared text/video embedding width
    sweeper_dim: int = 32     # d: internal width of the noise-scoring encoder
    heads: int = 4
    layers: int = 2
    dropout_rate: float = 0.1
    seed: int = 7

    def __post_init__(self):
        if self.embed_dim % self.heads or self.sweeper_dim % self.heads:
            raise DimensionError(
                f"embed_dim {self.embed_dim} and sweeper_dim {self.sweeper_dim} "
                f"must be divisible by {self.heads} heads")


def hash_bucket(token: str, buckets: int, seed: int) -> int:
    """Stable token-to-bucket mapping, identical across runs and platforms."""
    key = seed.__abs__().to_bytes(8, "little")
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little") % buckets


def hash_counts(tokens: list[str], buckets: int, seed: int) -> np.ndarray:
    """Feature-hash a token list to a (1, buckets) frequency vector."""
    counts = np.zeros((1, buckets))
    for tok in tokens:
        counts[0, hash_bucket(tok, buckets, seed)] += 1.0
    if tokens:
        counts /= len(tokens)
    return counts


class TextEncoder:
    """Feature-hashing bag-of-words encoder with a trainable two-layer head.

    Pure given (parameters, dropout seed): encoding the same item twice with
    the same seed yields identical vectors. Supplying a dropout seed applies
    dropout to the hidden layer, which is how stochastic positive pairs are
    produced for cluster training.
    """

    def __init__(self, config: EncoderConfig, name: str, rng: np.random.Generator):
        self.config = config
        o = config.embed_dim
        b = config.vocab_buckets
        self.w1 = Parameter(rng.normal(0.0, 1.0 / np.sqrt(b), size=(b, o)), f"{name}.w1")
        self.b1 = Parameter(np.zeros((1, o)), f"{name}.b1")
        self.w2 = Parameter(rng.normal(0.0, 1.0 / np.sqrt(o), size=(o, o)), f"{name}.w2")
        self.b2 = Parameter(np.zeros((1, o)), f"{name}.b2")

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    def encode(self, item: TextItem, dropout_seed: int | None = None) -> Matrix:
        if not item.tokens:
            raise DegenerateInputError(f"text {item.text_id!r} has no tokens")
        counts = Matrix(hash_counts(item.tokens, self.config.vocab_buckets, self.config.seed))
        hidden = tanh(add(matmul(counts, self.w1), self.b1))
        if dropout_seed is not None:
            hidden = dropout(hidden, self.config.dropout_rate, dropout_seed)
        return add(matmul(hidden, self.w2), self.b2)

    def encode_corpus(self, items: list[TextItem]) -> np.ndarray:
        """Inference-mode embeddings for many items as an (n, o) array."""
        return np.concatenate([self.encode(it).data for it in items], axis=0)


def sample_frames(total: int, target: int) -> list[int]:
    """Evenly spaced frame indices (floor spacing), nondecreasing.

    When target exceeds total, all frames are kept once and the last index is
    repeated to pad up to target.
    """
    if total < 1 or target < 1:
        raise ValueError(f"sample_frames needs total >= 1 and target >= 1, got {total}, {target}")
    if target <= total:
        return [i * total // target for i in range(target)]
    return list(range(total)) + [total - 1] * (target - total)


def select_frames(video: VideoItem, target: int) -> np.ndarray:
    return video.frames[sample_frames(video.frames.shape[0], target), :]
