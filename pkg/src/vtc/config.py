"""Run configuration: one flat dataclass plus a key=value file parser."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .clusterer import ClustererConfig
from .encoding import EncoderConfig


@dataclass
class RunConfig:
    seed: int = 7
    k: int = 5                     # neighbors per text cluster
    segments: int = 5              # similarity bins g for the noise scorer
    margin: float = 0.5            # cluster-training hinge margin
    label_smoothing: float = 0.1
    dropout_rate: float = 0.1
    embed_dim: int = 32            # o
    sweeper_dim: int = 32          # d
    heads: int = 4
    layers: int = 2
    frames: int = 8                # T' frames kept per video
    batch_size: int = 16
    epochs: int = 40
    learning_rate: float = 1e-3
    shortlist: int = 0             # rerank pool size R; 0 scores every video
    fusion_query: str = "anchor"   # "anchor" or "cleaned"
    vocab_buckets: int = 4096
    max_seq_len: int = 256
    clusterer_epochs: int = 8
    clusterer_lr: float = 0.1
    sweeper_warmup_epochs: int = 0
    sweeper_positions: bool = True

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.segments < 2:
            raise ValueError("segments must be >= 2")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.embed_dim % self.heads or self.sweeper_dim % self.heads:
            raise ValueError("embed_dim and sweeper_dim must be divisible by heads")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0 or self.clusterer_epochs < 0 or self.sweeper_warmup_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.learning_rate <= 0 or self.clusterer_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.shortlist < 0:
            raise ValueError("shortlist must be >= 0")
        if self.fusion_query not in ("anchor", "cleaned"):
            raise ValueError("fusion_query must be 'anchor' or 'cleaned'")
        if self.vocab_buckets < 2 or self.max_seq_len < 4:
            raise ValueError("vocab_buckets must be >= 2 and max_seq_len >= 4")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(vocab_buckets=self.vocab_buckets, embed_dim=self.embed_dim,
                             sweeper_dim=self.sweeper_dim, heads=self.heads,
                             layers=self.layers, dropout_rate=self.dropout_rate,
                             seed=self.seed)

    def clusterer_config(self) -> ClustererConfig:
        return ClustererConfig(margin=self.margin, epochs=self.clusterer_epochs,
                               lr=self.clusterer_lr, dropout_rate=self.dropout_rate,
                               seed=self.seed)


def _coerce(name: str, kind: type, text: str):
    if kind is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {name!r}: cannot parse bool from {text!r}")
    try:
        return kind(text)
    except ValueError:
        raise ValueError(f"config key {name!r}: cannot parse {kind.__name__} from {text!r}") from None


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse `key = value` lines with # comments; unknown keys are errors."""
    types = {f.name: f.type for f in fields(RunConfig)}
    kinds = {"int": int, "float": float, "str": str, "bool": bool}
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, kinds[str(types[key])], raw)
    values.update(overrides)
    return RunConfig(**values)


def load_config(path: str | Path, **overrides) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), **overrides)


def serialize_config(config: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines) + "\n"


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()
