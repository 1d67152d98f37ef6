"""
Label inference for the unsampled members of a sampled cluster.

UniVote gives every remaining tuple the cluster's positive-sample ratio.
SimVote gives each remaining tuple a similarity-weighted average of the sampled
labels. Both decide True at score >= ub, False at score <= lb, and leave the
tuple undetermined inside (lb, ub).
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, Optional, Sequence

import numpy as np

from errors import VoteError

DEFAULT_LB = 0.15

# target ids x sample ids -> nonnegative similarity matrix
SimilarityFn = Callable[[Sequence[int], Sequence[int]], np.ndarray]


@dataclass
class Thresholds:
    lb: float = DEFAULT_LB
    ub: Optional[float] = None

    def __post_init__(self):
        if self.ub is None:
            self.ub = 1.0 - self.lb
        self.validate()

    def validate(self) -> "Thresholds":
        if not 0.0 <= self.lb < self.ub <= 1.0:
            raise VoteError(f"thresholds need 0 <= lb < ub <= 1, got lb={self.lb}, ub={self.ub}")
        return self


@dataclass(frozen=True)
class VoteReport:
    positives: FrozenSet[int]
    undetermined: FrozenSet[int]
    negatives: FrozenSet[int]
    scores: Dict[int, float] = field(default_factory=dict)
    skew_violations: int = 0


def classify_score(score: float, th: Thresholds) -> Optional[bool]:
    """True / False when the score clears a threshold, None when undetermined."""
    if score >= th.ub:
        return True
    if score <= th.lb:
        return False
    return None


def _remaining(outcomes, cluster_ids: Iterable[int], sampled_ids: Iterable[int]):
    if not outcomes:
        raise VoteError("cannot vote without sampled outcomes")
    cluster_ids, sampled_ids = set(cluster_ids), set(sampled_ids)
    if not sampled_ids <= cluster_ids:
        raise VoteError(f"{len(sampled_ids - cluster_ids)} sampled ids are not cluster members")
    outcome_ids = {o.record_id for o in outcomes}
    if outcome_ids != sampled_ids or len(outcome_ids) != len(outcomes):
        raise VoteError("outcomes must cover the sampled ids exactly once")
    return sorted(cluster_ids - sampled_ids)


def _report(scores: Dict[int, float], th: Thresholds, skew_violations: int = 0) -> VoteReport:
    positives, undetermined, negatives = set(), set(), set()
    for rid, score in scores.items():
        decision = classify_score(score, th)
        if decision is True:
            positives.add(rid)
        elif decision is False:
            negatives.add(rid)
        else:
            undetermined.add(rid)
    return VoteReport(frozenset(positives), frozenset(undetermined), frozenset(negatives), scores, skew_violations)


def uni_vote(outcomes, cluster_ids, sampled_ids, th: Thresholds) -> VoteReport:
    remaining = _remaining(outcomes, cluster_ids, sampled_ids)
    score = sum(1 for o in outcomes if o.label) / len(outcomes)
    return _report({rid: score for rid in remaining}, th)


def sim_vote(
    outcomes,
    cluster_ids,
    sampled_ids,
    th: Thresholds,
    sim: SimilarityFn,
    weight_skew: Optional[float] = None,
) -> VoteReport:
    """
    score(t_i) = sum_j sim(i, j) / sum_k sim(i, k) * label_j over the sampled tuples j.

    weight_skew: when given, count tuples whose largest weight exceeds weight_skew / |sample|.
    """
    remaining = _remaining(outcomes, cluster_ids, sampled_ids)
    if not remaining:
        return _report({}, th)

    ordered = sorted(outcomes, key=lambda o: o.record_id)
    sample = [o.record_id for o in ordered]
    labels = np.array([1.0 if o.label else 0.0 for o in ordered])

    S = np.asarray(sim(remaining, sample), dtype=np.float64)
    if S.shape != (len(remaining), len(sample)):
        raise VoteError(f"similarity matrix has shape {S.shape}, expected {(len(remaining), len(sample))}")
    if not np.all(np.isfinite(S)) or (S < 0).any():
        raise VoteError("similarities must be finite and nonnegative")

    # Scale rows by their max first so constant rows become exact ones.
    row_max = S.max(axis=1, keepdims=True)
    zero = np.flatnonzero(row_max[:, 0] <= 0)
    if len(zero):
        raise VoteError(f"zero similarity normalizer for record {remaining[zero[0]]}")
    S = S / row_max
    norm = S.sum(axis=1)
    scores = np.clip((S @ labels) / norm, 0.0, 1.0)

    violations = 0
    if weight_skew is not None:
        max_weight = S.max(axis=1) / norm
        violations = int((max_weight > weight_skew / len(sample)).sum())

    return _report({rid: float(s) for rid, s in zip(remaining, scores)}, th, violations)


def default_similarity(a, b, distance: Callable[[np.ndarray, np.ndarray], float]) -> float:
    """sim = 1 / (1 + d(a, b)) for the configured clustering distance d."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise VoteError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return 1.0 / (1.0 + float(distance(a, b)))


def context_similarity(context) -> SimilarityFn:
    """Vectorized 1 / (1 + d) over a clustering DistanceContext."""

    def sim(target_ids, sample_ids):
        return 1.0 / (1.0 + context.distances_by_id(target_ids, sample_ids))

    return sim
