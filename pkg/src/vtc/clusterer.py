"""Cluster-encoder training with dropout-built triplets and a hinge margin loss.

Positives are the anchor re-encoded under an independent dropout mask;
negatives are drawn uniformly from the rest of the corpus. Distances are
cosine distances, so the margin lives on a [0, 2] scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    DegenerateInputError, Matrix, Tape, add, add_scalar, cosine_distance,
    relu, scale, sub, zero_grads,
)
from .encoding import EncoderConfig, TextEncoder, TextItem
from .optim import Sgd


@dataclass
class Triplet:
    anchor_id: str
    anchor_seed: int
    positive_seed: int   # independent dropout mask for the positive view
    negative_id: str


@dataclass
class ClustererConfig:
    margin: float = 0.5
    epochs: int = 8
    batch_size: int = 1
    lr: float = 0.1
    dropout_rate: float = 0.1
    seed: int = 7

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")


def build_triplet(anchor: TextItem, corpus: list[TextItem],
                  rng: np.random.Generator) -> Triplet:
    if len(corpus) < 2:
        raise DegenerateInputError("triplet construction needs a corpus of at least 2 texts")
    others = [it.text_id for it in corpus if it.text_id != anchor.text_id]
    negative_id = others[int(rng.integers(len(others)))]
    anchor_seed = int(rng.integers(2 ** 31))
    positive_seed = int(rng.integers(2 ** 31))
    while positive_seed == anchor_seed:
        positive_seed = int(rng.integers(2 ** 31))
    return Triplet(anchor_id=anchor.text_id, anchor_seed=anchor_seed,
                   positive_seed=positive_seed, negative_id=negative_id)


def clusterer_loss(t_anchor: Matrix, t_pos: Matrix, t_neg: Matrix, margin: float) -> Matrix:
    """max(0, U(anchor, pos) - U(anchor, neg) + margin) with cosine distance U."""
    gap = sub(cosine_distance(t_anchor, t_pos), cosine_distance(t_anchor, t_neg))
    return relu(add_scalar(gap, margin))


def train_clusterer(corpus: list[TextItem], enc_config: EncoderConfig,
                    config: ClustererConfig) -> tuple[TextEncoder, dict[str, np.ndarray], list[float]]:
    """Train the cluster encoder; return it with final no-dropout embeddings.

    Returns (encoder, {text_id: (o,) embedding}, per-epoch mean losses).
    """
    if len(corpus) < 2:
        raise DegenerateInputError("clusterer training needs at least 2 texts")
    rng = np.random.default_rng(config.seed)
    encoder = TextEncoder(enc_config, "clusterer", rng)
    encoder.config.dropout_rate = config.dropout_rate
    opt = Sgd(encoder.parameters(), lr=config.lr)
    history: list[float] = []
    by_id = {it.text_id: it for it in corpus}
    for _ in range(config.epochs):
        order = rng.permutation(len(corpus))
        epoch_losses = []
        batch: list[Triplet] = []
        for i, pos in enumerate(order):
            batch.append(build_triplet(corpus[int(pos)], corpus, rng))
            if len(batch) < config.batch_size and i != len(order) - 1:
                continue
            with Tape() as tape:
                total = None
                for trip in batch:
                    anchor = by_id[trip.anchor_id]
                    t_a = encoder.encode(anchor, dropout_seed=trip.anchor_seed)
                    t_p = encoder.encode(anchor, dropout_seed=trip.positive_seed)
                    t_n = encoder.encode(by_id[trip.negative_id],
                                         dropout_seed=trip.anchor_seed)
                    loss = clusterer_loss(t_a, t_p, t_n, config.margin)
                    total = loss if total is None else add(total, loss)
                mean_loss = scale(total, 1.0 / len(batch))
            tape.backward(mean_loss)
            opt.step()
            zero_grads(encoder.parameters())
            epoch_losses.append(mean_loss.item())
            batch = []
        history.append(float(np.mean(epoch_losses)))
    embeddings = {it.text_id: encoder.encode(it).data[0].copy() for it in corpus}
    return encoder, embeddings, history
