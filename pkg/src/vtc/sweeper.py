"""Noise scoring for text clusters.

An anchor text and its K retrieved neighbors are packed into one marked-up
token sequence, run through a small self-attention encoder, and pooled per
segment. Neighbor segments get a softmax score over g similarity bins; the
training labels come from token-set Jaccard similarity between the anchor
and each neighbor. Class weights and label smoothing keep the loss usable
when the bins are imbalanced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AttentionWeights, DimensionError, Matrix, Parameter,
    add, concat_rows, gather_rows, init_attention_weights, layer_norm, log,
    matmul, mean_rows, mul, multi_head_attention, relu, scale, slice_rows,
    softmax_rows, sum_all,
)
from .ann import ClusterAssignment
from .encoding import SPECIAL, EncoderConfig, TextItem, hash_bucket


@dataclass
class AugmentedSequence:
    """[CLS] anchor [SEP] neighbor_1 [SEP] ... neighbor_K [SEP] plus span bookkeeping.

    spans are half-open (start, stop) token ranges; span 0 is the anchor and
    spans 1..K follow the neighbor order of the cluster assignment.
    neighbor_ids lists the neighbors actually kept after length truncation.
    """
    anchor_id: str
    tokens: list[str]
    spans: list[tuple[int, int]]
    neighbor_ids: list[str]


def build_augmented_sequence(anchor: TextItem, cluster: ClusterAssignment,
                             corpus_by_id: dict[str, TextItem],
                             max_tokens: int | None = None) -> AugmentedSequence:
    """Join the anchor and its neighbors into one marked-up sequence.

    Truncation drops whole trailing neighbors, never part of a segment.
    """
    tokens = [SPECIAL.cls] + list(anchor.tokens) + [SPECIAL.sep]
    spans = [(1, 1 + len(anchor.tokens))]
    kept: list[str] = []
    for nid in cluster.neighbor_ids:
        if nid not in corpus_by_id:
            raise KeyError(f"cluster of {cluster.anchor_id!r} references unknown text {nid!r}")
        ntoks = corpus_by_id[nid].tokens
        if max_tokens is not None and len(tokens) + len(ntoks) + 1 > max_tokens:
            break
        start = len(tokens)
        tokens.extend(ntoks)
        tokens.append(SPECIAL.sep)
        spans.append((start, start + len(ntoks)))
        kept.append(nid)
    return AugmentedSequence(anchor_id=anchor.text_id, tokens=tokens,
                             spans=spans, neighbor_ids=kept)


def jaccard(a: list[str], b: list[str]) -> float:
    """|set(a) & set(b)| / |set(a) | set(b)|, with 0 when both are empty."""
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def segment_of(similarity: float, segments: int) -> int:
    """Map a [0, 1] similarity to its bin k in 1..g; exactly 1.0 closes bin g."""
    if not 0.0 <= similarity <= 1.0:
        raise ValueError(f"similarity {similarity} outside [0, 1]")
    if similarity == 1.0:
        return segments
    k = int(similarity * segments) + 1
    # the product can round across a bin edge; restore (k-1)/g <= B < k/g
    if k > 1 and similarity < (k - 1) / segments:
        k -= 1
    elif k < segments and similarity >= k / segments:
        k += 1
    return k


@dataclass
class SweepLabels:
    y: np.ndarray          # (K, g) one-hot rows
    jaccard: list[float]   # per neighbor
    segments: list[int]    # per neighbor, 1-based bin


def make_labels(anchor: TextItem, neighbors: list[TextItem], g: int) -> SweepLabels:
    sims = [jaccard(anchor.tokens, n.tokens) for n in neighbors]
    segs = [segment_of(s, g) for s in sims]
    y = np.zeros((len(neighbors), g))
    for row, k in enumerate(segs):
        y[row, k - 1] = 1.0
    return SweepLabels(y=y, jaccard=sims, segments=segs)


def class_weights(all_labels: list[SweepLabels], g: int, smoothing: int = 1) -> np.ndarray:
    """Inverse-frequency bin weights: N / (count_k + smoothing) / g.

    smoothing=1 keeps empty bins finite; pass 0 for the raw formula.
    """
    counts = np.zeros(g)
    total = 0
    for lab in all_labels:
        for k in lab.segments:
            counts[k - 1] += 1
            total += 1
    if total == 0:
        raise ValueError("class_weights needs at least one labeled pair")
    return total / (counts + smoothing) / g


def sweep_loss(s: Matrix, y: np.ndarray, weights: np.ndarray, epsilon: float) -> Matrix:
    """Weighted label-smoothed cross entropy, averaged over neighbor pairs.

    Per pair: -sum_k w_k ((1-eps) y_k + eps/g) log s_k.
    """
    if s.shape != y.shape:
        raise DimensionError(f"sweep_loss: probabilities {s.shape} vs labels {y.shape}")
    g = y.shape[1]
    if weights.shape != (g,):
        raise DimensionError(f"sweep_loss: weights shape {weights.shape}, expected ({g},)")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"label smoothing {epsilon} outside [0, 1)")
    target = Matrix(weights[None, :] * ((1.0 - epsilon) * y + epsilon / g))
    per_entry = mul(log(s), target)
    return scale(sum_all(per_entry), -1.0 / y.shape[0])


@dataclass
class SweeperOutput:
    h: Matrix  # (K+1, d) pooled feature per segment, anchor first
    s: Matrix  # (K, g) softmax similarity-bin probabilities per neighbor


class SweeperEncoder:
    """Self-attention encoder over the augmented sequence with a bin classifier.

    Token embeddings are feature-hash lookups into a table with two reserved
    rows for the sequence markers, plus sinusoidal positions that restart at
    every segment boundary (so reordering whole neighbor segments permutes
    the outputs exactly). L pre-built layers of multi-head self-attention and
    a feed-forward net, each with residual connection and layer norm.
    """

    def __init__(self, config: EncoderConfig, segments: int,
                 rng: np.random.Generator, use_positions: bool = True):
        self.config = config
        self.segments_out = segments
        self.use_positions = use_positions
        d = config.sweeper_dim
        b = config.vocab_buckets
        self.embedding = Parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(b + 2, d)),
                                   "sweeper.embedding")
        self.layers = []
        for i in range(config.layers):
            layer = {
                "attn": init_attention_weights(d, d, d, d, config.heads,
                                               f"sweeper.layer{i}.attn", rng),
                "ln1_g": Parameter(np.ones((1, d)), f"sweeper.layer{i}.ln1_g"),
                "ln1_b": Parameter(np.zeros((1, d)), f"sweeper.layer{i}.ln1_b"),
                "ffn_w1": Parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, 2 * d)),
                                    f"sweeper.layer{i}.ffn_w1"),
                "ffn_b1": Parameter(np.zeros((1, 2 * d)), f"sweeper.layer{i}.ffn_b1"),
                "ffn_w2": Parameter(rng.normal(0.0, 1.0 / math.sqrt(2 * d), size=(2 * d, d)),
                                    f"sweeper.layer{i}.ffn_w2"),
                "ffn_b2": Parameter(np.zeros((1, d)), f"sweeper.layer{i}.ffn_b2"),
                "ln2_g": Parameter(np.ones((1, d)), f"sweeper.layer{i}.ln2_g"),
                "ln2_b": Parameter(np.zeros((1, d)), f"sweeper.layer{i}.ln2_b"),
            }
            self.layers.append(layer)
        self.ws = Parameter(rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, segments)), "sweeper.ws")
        self.bs = Parameter(np.zeros((1, segments)), "sweeper.bs")

    def parameters(self) -> list[Parameter]:
        out = [self.embedding]
        for layer in self.layers:
            out.extend(layer["attn"].parameters())
            out.extend([layer["ln1_g"], layer["ln1_b"], layer["ffn_w1"], layer["ffn_b1"],
                        layer["ffn_w2"], layer["ffn_b2"], layer["ln2_g"], layer["ln2_b"]])
        out.extend([self.ws, self.bs])
        return out

    def _token_index(self, token: str) -> int:
        b = self.config.vocab_buckets
        if token == SPECIAL.cls:
            return b
        if token == SPECIAL.sep:
            return b + 1
        return hash_bucket(token, b, self.config.seed)

    def _positions(self, n_tokens: int, spans: list[tuple[int, int]]) -> np.ndarray:
        """Sinusoidal encodings; the position counter restarts at each segment."""
        d = self.config.sweeper_dim
        pos = np.zeros(n_tokens)
        starts = {start for start, _ in spans}
        counter = 0
        for i in range(n_tokens):
            if i in starts:
                counter = 0
            pos[i] = counter
            counter += 1
        dims = np.arange(d)
        angle = pos[:, None] / np.power(10000.0, (2 * (dims // 2)) / d)[None, :]
        enc = np.zeros((n_tokens, d))
        enc[:, 0::2] = np.sin(angle[:, 0::2])
        enc[:, 1::2] = np.cos(angle[:, 1::2])
        return enc

    def forward(self, seq: AugmentedSequence) -> SweeperOutput:
        if not seq.spans or any(stop <= start for start, stop in seq.spans):
            raise DimensionError(f"sequence of {seq.anchor_id!r} has an empty segment")
        idx = [self._token_index(t) for t in seq.tokens]
        x = gather_rows(self.embedding, idx)
        if self.use_positions:
            x = add(x, Matrix(self._positions(len(seq.tokens), seq.spans)))
        for layer in self.layers:
            attended = multi_head_attention(x, x, x, layer["attn"])
            x = layer_norm(add(x, attended), layer["ln1_g"], layer["ln1_b"])
            hidden = relu(add(matmul(x, layer["ffn_w1"]), layer["ffn_b1"]))
            fed = add(matmul(hidden, layer["ffn_w2"]), layer["ffn_b2"])
            x = layer_norm(add(x, fed), layer["ln2_g"], layer["ln2_b"])
        pooled = [mean_rows(slice_rows(x, start, stop)) for start, stop in seq.spans]
        h = concat_rows(pooled)
        if len(seq.spans) > 1:
            neighbor_rows = slice_rows(h, 1, h.rows)
            s = softmax_rows(add(matmul(neighbor_rows, self.ws), self.bs))
        else:
            s = Matrix(np.zeros((0, self.segments_out)))
        return SweeperOutput(h=h, s=s)
