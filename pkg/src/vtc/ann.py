"""Nearest-neighbor retrieval over text embeddings.

Two modes: an exact brute-force scan (the default at desk scale, and the
oracle in tests) and signed-random-hyperplane LSH with multi-probe bucket
lookup. Both rank by cosine distance with ties broken by ascending id.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .autodiff import DegenerateInputError


class CapacityError(ValueError):
    """More neighbors requested than the index can supply."""


@dataclass
class ClusterAssignment:
    anchor_id: str
    neighbor_ids: list[str]


@dataclass
class LshParams:
    tables: int = 8
    hyperplanes: int = 8
    seed: int = 7
    probe_radius: int = 2   # buckets within this Hamming distance are scanned


class VectorIndex:
    """Immutable-after-build index over (id, vector) pairs.

    mode "exact" scans everything; mode "lsh" gathers candidates from
    hash buckets across tables (probing buckets up to probe_radius sign
    flips away) and exact-ranks the candidates, falling back to a full
    scan when fewer than K candidates survive.
    """

    def __init__(self, ids: list[str], vectors: np.ndarray, mode: str = "exact",
                 lsh: LshParams | None = None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if len(ids) != len(set(ids)):
            raise ValueError("index ids must be unique")
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise ValueError(f"vectors must be ({len(ids)}, o), got {vectors.shape}")
        if mode not in ("exact", "lsh"):
            raise ValueError(f"unknown index mode {mode!r}")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0.0):
            raise DegenerateInputError("cannot index zero vectors")
        self.ids = list(ids)
        self.vectors = vectors
        self.mode = mode
        self.lsh = lsh or LshParams()
        self._unit = vectors / norms[:, None]
        # rank of each id in sorted order, for vectorized tie-breaking
        self._id_rank = np.empty(len(ids), dtype=np.intp)
        self._id_rank[np.argsort(np.asarray(self.ids, dtype=object))] = np.arange(len(ids))
        if mode == "lsh":
            self._build_lsh()

    def __len__(self) -> int:
        return len(self.ids)

    def _build_lsh(self) -> None:
        rng = np.random.default_rng(self.lsh.seed)
        self._planes = [rng.normal(size=(self.lsh.hyperplanes, self.vectors.shape[1]))
                        for _ in range(self.lsh.tables)]
        self._buckets: list[dict[int, list[int]]] = []
        for planes in self._planes:
            keys = self._bucket_keys(self.vectors, planes)
            table: dict[int, list[int]] = {}
            for i, key in enumerate(keys):
                table.setdefault(int(key), []).append(i)
            self._buckets.append(table)

    @staticmethod
    def _bucket_keys(vectors: np.ndarray, planes: np.ndarray) -> np.ndarray:
        if planes.shape[0] == 0:
            return np.zeros(vectors.shape[0], dtype=np.int64)
        bits = (vectors @ planes.T) >= 0.0
        weights = 1 << np.arange(planes.shape[0], dtype=np.int64)
        return bits @ weights

    def _probe_keys(self, key: int) -> list[int]:
        h = self.lsh.hyperplanes
        keys = [key]
        for r in range(1, self.lsh.probe_radius + 1):
            for flips in combinations(range(h), r):
                mask = 0
                for b in flips:
                    mask |= 1 << b
                keys.append(key ^ mask)
        return keys

    def _rank(self, query: np.ndarray, k: int, exclude: set[str],
              candidates: np.ndarray | None = None) -> list[str]:
        qn = np.linalg.norm(query)
        if qn == 0.0:
            raise DegenerateInputError("query is the zero vector")
        dist = 1.0 - self._unit @ (query / qn)
        keep = np.ones(len(self.ids), dtype=bool)
        if candidates is not None:
            keep[:] = False
            keep[candidates] = True
        for i, the_id in enumerate(self.ids):
            if the_id in exclude:
                keep[i] = False
        avail = int(keep.sum())
        if k > avail:
            raise CapacityError(f"requested K={k} but only {avail} indexed vectors are eligible")
        dist = np.where(keep, dist, np.inf)
        order = np.lexsort((self._id_rank, dist))
        return [self.ids[i] for i in order[:k]]

    def knn_exact(self, query: np.ndarray, k: int, exclude: set[str] | frozenset = frozenset(),
                  anchor_id: str = "") -> ClusterAssignment:
        """The exact K nearest by cosine distance, ties broken by ascending id."""
        return ClusterAssignment(anchor_id, self._rank(np.asarray(query, dtype=np.float64),
                                                       k, set(exclude)))

    def knn_approx(self, query: np.ndarray, k: int, exclude: set[str] | frozenset = frozenset(),
                   anchor_id: str = "") -> ClusterAssignment:
        if self.mode != "lsh":
            raise ValueError("knn_approx requires an index built in lsh mode")
        query = np.asarray(query, dtype=np.float64)
        exclude = set(exclude)
        hits: set[int] = set()
        for planes, table in zip(self._planes, self._buckets):
            key = int(self._bucket_keys(query.reshape(1, -1), planes)[0])
            for probe in self._probe_keys(key):
                hits.update(table.get(probe, ()))
        eligible = [i for i in sorted(hits) if self.ids[i] not in exclude]
        if len(eligible) < k:
            # not enough bucket candidates; exact scan keeps the contract total
            return self.knn_exact(query, k, exclude, anchor_id)
        return ClusterAssignment(anchor_id, self._rank(query, k, exclude,
                                                       candidates=np.asarray(eligible)))

    def query(self, vector: np.ndarray, k: int, exclude: set[str] | frozenset = frozenset(),
              anchor_id: str = "") -> ClusterAssignment:
        if self.mode == "lsh":
            return self.knn_approx(vector, k, exclude, anchor_id)
        return self.knn_exact(vector, k, exclude, anchor_id)


def build_clusters(index: VectorIndex, k: int) -> list[ClusterAssignment]:
    """One assignment per indexed id, each excluding its own anchor."""
    if len(index) <= k:
        raise CapacityError(f"need more than K={k} indexed vectors, have {len(index)}")
    out = []
    for i, anchor_id in enumerate(index.ids):
        out.append(index.query(index.vectors[i], k, exclude={anchor_id}, anchor_id=anchor_id))
    return out
