"""
Seeded k-means over record embeddings under a pluggable distance.

With lam == 1 the distance is Euclidean and Lloyd iterations update centroids.
With lam < 1 the distance mixes normalized Euclidean distance with normalized
symmetric BM25 dissimilarity; BM25 has no vector mean, so clusters are
represented by medoids instead.
"""

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from errors import DistanceError

logger = logging.getLogger(__name__)

# Dense distance or score blocks are cut to about this many entries
BLOCK_ENTRIES = 1 << 22
DEFAULT_MEDOID_CANDIDATES = 64


def tokenize(text: str) -> List[str]:
    return re.findall(r"\w+", text.lower())


@dataclass(frozen=True)
class DistanceSpec:
    lam: float = 1.0
    k1: float = 1.2
    b: float = 0.75

    def validate(self) -> "DistanceSpec":
        if not 0.0 <= self.lam <= 1.0:
            raise DistanceError(f"lambda must be in [0, 1], got {self.lam}")
        if self.k1 < 0 or not 0.0 <= self.b <= 1.0:
            raise DistanceError(f"invalid BM25 parameters k1={self.k1}, b={self.b}")
        return self

    @property
    def is_euclidean(self) -> bool:
        return self.lam >= 1.0


class BM25Index:
    """
    Okapi BM25 over a fixed corpus of tokenized records.

    score(q, d) = sum over query tokens t of tf(t, q) * idf(t) * tf(t, d) * (k1 + 1) / (tf(t, d) + k1 * (1 - b + b * |d| / avgdl)),
    so the corpus reduces to a sparse term-count matrix and a sparse term-weight matrix and
    every block of scores is one sparse product.
    """

    def __init__(self, corpus: Mapping[int, Sequence[str]], k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.record_ids = list(corpus)
        self.position = {rid: i for i, rid in enumerate(self.record_ids)}
        self.N = len(self.record_ids)

        counters = [Counter(tokens) for tokens in corpus.values()]
        vocab: Dict[str, int] = {}
        rows, cols, tfs = [], [], []
        for i, counts in enumerate(counters):
            for token, tf in counts.items():
                rows.append(i)
                cols.append(vocab.setdefault(token, len(vocab)))
                tfs.append(tf)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        tfs = np.asarray(tfs, dtype=float)

        lengths = np.bincount(rows, weights=tfs, minlength=self.N)
        self.avgdl = float(lengths.mean()) if self.N else 0.0
        df = np.bincount(cols, minlength=len(vocab))
        idf = np.log((self.N - df + 0.5) / (df + 0.5) + 1)
        if self.avgdl > 0:
            norm = k1 * (1 - b + b * lengths / self.avgdl)
        else:
            norm = np.full(self.N, k1)
        weights = idf[cols] * tfs * (k1 + 1) / (tfs + norm[rows])

        shape = (self.N, len(vocab))
        self.counts = sparse.csr_matrix((tfs, (rows, cols)), shape=shape)
        self.weights = sparse.csr_matrix((weights, (rows, cols)), shape=shape)

        # equal ids mean equal token multisets
        signatures: Dict[tuple, int] = {}
        self.signature = np.array(
            [signatures.setdefault(tuple(sorted(c.items())), len(signatures)) for c in counters],
            dtype=np.int64,
        )

    def __len__(self) -> int:
        return self.N

    def __contains__(self, record_id) -> bool:
        return record_id in self.position

    def _rows(self, record_ids: Sequence[int]) -> np.ndarray:
        try:
            return np.array([self.position[rid] for rid in record_ids], dtype=np.int64)
        except KeyError as e:
            raise DistanceError(f"record {e.args[0]} is not in the BM25 corpus") from None

    def score(self, query_id: int, doc_id: int) -> float:
        q, d = self._rows([query_id, doc_id])
        return float(self.counts[q].multiply(self.weights[d]).sum())

    def symmetric_scores(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        """Mean of both query/document directions for every (row, col) id pair."""
        r, c = self._rows(rows), self._rows(cols)
        forward = self.counts[r] @ self.weights[c].T
        backward = self.weights[r] @ self.counts[c].T
        return 0.5 * (forward + backward).toarray()

    def symmetric_score(self, a: int, b: int) -> float:
        return float(self.symmetric_scores([a], [b])[0, 0])

    def score_range(self, record_ids: Optional[Sequence[int]] = None) -> Tuple[float, float]:
        """Smallest and largest symmetric score over distinct pairs of record_ids (default: the corpus)."""
        ids = list(self.record_ids if record_ids is None else record_ids)
        if len(ids) < 2:
            return 0.0, 0.0
        lo, hi = math.inf, -math.inf
        step = _block_rows(len(ids))
        for start in range(0, len(ids), step):
            block = ids[start:start + step]
            S = self.symmetric_scores(block, ids)
            S[np.arange(len(block)), np.arange(start, start + len(block))] = np.nan
            lo = min(lo, float(np.nanmin(S)))
            hi = max(hi, float(np.nanmax(S)))
        return lo, hi

    def similarity_matrix(
        self,
        rows: Sequence[int],
        cols: Sequence[int],
        score_range: Optional[Tuple[float, float]] = None,
    ) -> np.ndarray:
        """
        Symmetric scores min-max scaled to [0, 1] over `score_range`.
        Identical token multisets (the diagonal included) always score 1.
        """
        lo, hi = self.score_range() if score_range is None else score_range
        S = self.symmetric_scores(rows, cols)
        if hi > lo:
            sim = np.clip((S - lo) / (hi - lo), 0.0, 1.0)
        else:
            sim = (S > 0).astype(float)
        r, c = self._rows(rows), self._rows(cols)
        sim[self.signature[r][:, None] == self.signature[c][None, :]] = 1.0
        return sim

    def normalized_similarity(self, a: int, b: int, score_range: Optional[Tuple[float, float]] = None) -> float:
        return float(self.similarity_matrix([a], [b], score_range)[0, 0])


def build_lexicon(table, columns: Sequence[str], spec: Optional[DistanceSpec] = None) -> BM25Index:
    """BM25 index over the referenced column values of every record."""
    spec = spec or DistanceSpec()
    corpus = {
        record.id: tokenize(" ".join(record.columns.get(c, "") for c in columns))
        for record in table
    }
    return BM25Index(corpus, k1=spec.k1, b=spec.b)


def mix_distance(l2_norm, bm25_norm, lam: float):
    return lam * l2_norm + (1.0 - lam) * (1.0 - bm25_norm)


def _l2_block(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    sq = (A * A).sum(axis=1)[:, None] - 2.0 * A @ B.T + (B * B).sum(axis=1)[None, :]
    return np.sqrt(np.maximum(sq, 0.0))


def _block_rows(n: int) -> int:
    return max(1, BLOCK_ENTRIES // max(n, 1))


def _l2_range(X: np.ndarray) -> float:
    """Largest pairwise Euclidean distance, reduced block by block."""
    n = len(X)
    if n < 2:
        return 0.0
    step = _block_rows(n)
    longest = 0.0
    for start in range(0, n, step):
        longest = max(longest, float(_l2_block(X[start:start + step], X).max()))
    return longest


class DistanceContext:
    """
    Hybrid distance over a fixed id set. Both components are min-max normalized
    over that set: L2 by its largest pairwise distance, BM25 by the smallest and
    largest symmetric score among distinct pairs.
    """

    def __init__(self, ids: Sequence[int], emb, spec: DistanceSpec, lex: Optional[BM25Index] = None):
        spec.validate()
        missing = emb.missing(ids)
        if missing:
            raise DistanceError(f"{len(missing)} ids have no embedding, e.g. {missing[:5]}")
        if not spec.is_euclidean:
            if lex is None or len(lex) == 0:
                raise DistanceError("lambda < 1 requires a non-empty BM25 corpus")
            absent = [rid for rid in ids if rid not in lex]
            if absent:
                raise DistanceError(f"{len(absent)} ids missing from the BM25 corpus, e.g. {absent[:5]}")

        self.ids = list(ids)
        self.position = {rid: i for i, rid in enumerate(self.ids)}
        self.spec = spec
        self.lex = lex
        self.X = emb.matrix(self.ids)
        self.l2_scale = _l2_range(self.X)
        self.bm25_range = None if spec.is_euclidean else lex.score_range(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def distance_matrix(self, rows: Sequence[int], cols: Sequence[int]) -> np.ndarray:
        """Distances between positions (not record ids) in this context."""
        rows, cols = np.asarray(rows, dtype=int), np.asarray(cols, dtype=int)
        l2 = _l2_block(self.X[rows], self.X[cols])
        l2 = np.minimum(l2 / self.l2_scale, 1.0) if self.l2_scale > 0 else np.zeros_like(l2)
        l2[rows[:, None] == cols[None, :]] = 0.0
        if self.spec.is_euclidean:
            return l2
        sim = self.lex.similarity_matrix(
            [self.ids[i] for i in rows], [self.ids[j] for j in cols], score_range=self.bm25_range,
        )
        return mix_distance(l2, sim, self.spec.lam)

    def distances_by_id(self, row_ids: Sequence[int], col_ids: Sequence[int]) -> np.ndarray:
        try:
            rows = [self.position[rid] for rid in row_ids]
            cols = [self.position[rid] for rid in col_ids]
        except KeyError as e:
            raise DistanceError(f"record {e.args[0]} is not in this distance context") from None
        return self.distance_matrix(rows, cols)


def hybrid_distance(
    a: int,
    b: int,
    emb,
    lex: Optional[BM25Index],
    spec: DistanceSpec,
    context: Optional[DistanceContext] = None,
) -> float:
    """
    d = lam * L2norm(a, b) + (1 - lam) * (1 - simBM25norm(a, b)).
    Normalization ranges come from `context` when given, otherwise from every embedded id.
    """
    for rid in (a, b):
        if rid not in emb:
            raise DistanceError(f"record {rid} has no embedding")
    if context is None:
        context = DistanceContext(emb.ids(), emb, spec, lex)
    return float(context.distances_by_id([a], [b])[0, 0])


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    member_ids: tuple
    centroid: Optional[np.ndarray] = None
    medoid_id: Optional[int] = None

    def __len__(self) -> int:
        return len(self.member_ids)


@dataclass
class Partition:
    clusters: List[Cluster]
    assignment: Dict[int, int]
    objective: List[float] = field(default_factory=list)
    iterations: int = 0

    def to_frame(self) -> pd.DataFrame:
        rows = sorted(self.assignment.items())
        return pd.DataFrame(rows, columns=["id", "cluster"])


def write_partition(partition: Partition, path: str) -> None:
    partition.to_frame().to_json(path, orient="records", lines=True)


def cluster_label_distribution(partition: Partition, truth: Mapping[int, bool]) -> pd.DataFrame:
    """Per-cluster counts of true/false labels and the majority-label purity."""
    rows = []
    for cluster in partition.clusters:
        positives = sum(1 for rid in cluster.member_ids if truth[rid])
        size = len(cluster)
        rows.append({
            "cluster": cluster.cluster_id,
            "size": size,
            "positives": positives,
            "negatives": size - positives,
            "purity": max(positives, size - positives) / size,
        })
    return pd.DataFrame(rows, columns=["cluster", "size", "positives", "negatives", "purity"])


def _seed_plus_plus(
    n: int,
    k: int,
    rng: np.random.Generator,
    sq_dist_from: Callable[[np.ndarray], np.ndarray],
) -> List[int]:
    """Greedy k-means++: sample a few D^2-weighted candidates per step, keep the best."""
    n_trials = 2 + int(math.log(k))
    centers = [int(rng.integers(n))]
    closest = sq_dist_from(np.array(centers))[0]

    for _ in range(1, k):
        total = float(closest.sum())
        if total <= 0:
            remaining = np.setdiff1d(np.arange(n), centers)
            if len(remaining) == 0:
                break
            centers.append(int(rng.choice(remaining)))
            continue
        draws = rng.random(n_trials) * total
        candidates = np.minimum(np.searchsorted(np.cumsum(closest), draws), n - 1)
        candidate_dist = np.minimum(closest[None, :], sq_dist_from(candidates))
        best = int(np.argmin(candidate_dist.sum(axis=1)))
        centers.append(int(candidates[best]))
        closest = candidate_dist[best]
    return centers


def _repair_empty(labels: np.ndarray, dist_to_own: np.ndarray, k: int) -> List[tuple]:
    """Move the farthest point of a multi-member cluster into each empty cluster."""
    moves = []
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j] > 0:
            continue
        donors = counts[labels] > 1
        if not donors.any():
            break
        p = int(np.argmax(np.where(donors, dist_to_own, -1.0)))
        labels[p] = j
        dist_to_own[p] = 0.0
        moves.append((j, p))
    return moves


def _lloyd(X, k, rng, max_iters):
    def sq_dist_from(idx):
        return _l2_block(X[idx], X) ** 2

    C = X[_seed_plus_plus(len(X), k, rng, sq_dist_from)].copy()
    k = len(C)
    labels = None
    objective = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        D = _l2_block(X, C) ** 2
        new = D.argmin(axis=1)
        objective.append(float(D[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = labels == j
            if members.any():
                C[j] = X[members].mean(axis=0)
        dist_to_own = np.sqrt(((X - C[labels]) ** 2).sum(axis=1))
        for j, p in _repair_empty(labels, dist_to_own, k):
            C[j] = X[p]
    return labels, objective, iterations


def _medoids(ctx: DistanceContext, k, rng, max_iters, medoid_candidates):
    n = len(ctx)
    everyone = np.arange(n)

    def sq_dist_from(idx):
        return ctx.distance_matrix(idx, everyone) ** 2

    medoids = _seed_plus_plus(n, k, rng, sq_dist_from)
    k = len(medoids)
    labels = None
    objective = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        D = ctx.distance_matrix(everyone, medoids)
        new = D.argmin(axis=1)
        objective.append(float(D[everyone, new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = np.flatnonzero(labels == j)
            if len(members) == 0:
                continue
            others = members[members != medoids[j]]
            take = min(medoid_candidates, len(others))
            sampled = rng.choice(others, size=take, replace=False) if take else np.array([], dtype=int)
            candidates = np.concatenate([[medoids[j]], np.sort(sampled)]).astype(int)
            costs = ctx.distance_matrix(candidates, members).sum(axis=1)
            medoids[j] = int(candidates[int(np.argmin(costs))])
        dist_to_own = ctx.distance_matrix(everyone, medoids)[everyone, labels]
        for j, p in _repair_empty(labels, dist_to_own, k):
            medoids[j] = p
    return labels, medoids, objective, iterations


def kmeans(
    ids: Sequence[int],
    emb,
    k: int,
    spec: Optional[DistanceSpec] = None,
    seed: int = 0,
    max_iters: int = 100,
    lex: Optional[BM25Index] = None,
    medoid_candidates: int = DEFAULT_MEDOID_CANDIDATES,
) -> Partition:
    """
    Partition ids into at most k non-empty clusters.

    Args:
        ids: record ids; their order is part of the determinism contract
        emb: EmbeddingSet covering ids
        k: requested cluster count
        spec: distance mixing; lam < 1 switches to medoids and needs lex
        seed: RNG seed for k-means++ seeding and medoid candidate sampling
        max_iters: cap on assignment/update rounds
        lex: BM25 corpus for the lexical term

    Returns:
        Partition covering every id exactly once
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    ids = list(ids)
    if not ids:
        raise ValueError("cannot cluster an empty id set")
    spec = (spec or DistanceSpec()).validate()
    missing = emb.missing(ids)
    if missing:
        raise DistanceError(f"{len(missing)} ids have no embedding, e.g. {missing[:5]}")

    if len(ids) <= k:
        clusters = [
            Cluster(cluster_id=i, member_ids=(rid,), centroid=emb.matrix([rid])[0],
                    medoid_id=None if spec.is_euclidean else rid)
            for i, rid in enumerate(ids)
        ]
        return Partition(clusters=clusters, assignment={rid: i for i, rid in enumerate(ids)})

    rng = np.random.default_rng(seed)
    if spec.is_euclidean:
        X = emb.matrix(ids)
        labels, objective, iterations = _lloyd(X, k, rng, max_iters)
        medoids = None
    else:
        ctx = DistanceContext(ids, emb, spec, lex)
        X = ctx.X
        labels, medoids, objective, iterations = _medoids(ctx, k, rng, max_iters, medoid_candidates)

    clusters = []
    assignment = {}
    for j in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == j)
        cid = len(clusters)
        member_ids = tuple(ids[i] for i in members)
        clusters.append(Cluster(
            cluster_id=cid,
            member_ids=member_ids,
            centroid=X[members].mean(axis=0),
            medoid_id=None if medoids is None else ids[medoids[j]],
        ))
        assignment.update({rid: cid for rid in member_ids})

    logger.debug("k-means: %d ids -> %d clusters in %d iterations", len(ids), len(clusters), iterations)
    return Partition(clusters=clusters, assignment=assignment, objective=objective, iterations=iterations)
