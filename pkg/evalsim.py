"""
Metrics, synthetic workloads, and Monte Carlo checks of the voting guarantees.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from config import FilterConfig
from data_model import Predicate, Record, Table
from embedding_store import EmbeddingSet
from engine import Provenance, derive_seed, sample_cluster, semantic_filter
from errors import ConfigError, EvaluationError
from file_utils import ensure_directory_exists
from oracle import BernoulliMockOracle, ColumnMockOracle, OutcomeCache
from planner import (
    Infeasible,
    PlannerParams,
    bernstein_tail,
    error_ceiling,
    failure_probability,
    sample_size,
    xi_simvote,
    xi_univote,
)

logger = logging.getLogger(__name__)

TRUTH_COLUMN = "label"
TEXT_COLUMN = "text"
SYNTHETIC_PREDICATE = Predicate(template="The {text} is relevant.")
MC_SIGMAS = 3.0


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    cost: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(
    predicted: Mapping[int, bool],
    truth: Mapping[int, bool],
    cost: Optional[Mapping[str, float]] = None,
) -> Metrics:
    """Confusion-matrix metrics over identical id sets; f1 is 0 when precision + recall is 0."""
    if set(predicted) != set(truth):
        only_pred = len(set(predicted) - set(truth))
        only_truth = len(set(truth) - set(predicted))
        raise EvaluationError(f"id sets differ: {only_pred} only predicted, {only_truth} only in truth")

    ids = sorted(truth)
    pred = np.array([bool(predicted[rid]) for rid in ids], dtype=bool)
    true = np.array([bool(truth[rid]) for rid in ids], dtype=bool)
    tp = int((pred & true).sum())
    fp = int((pred & ~true).sum())
    tn = int((~pred & ~true).sum())
    fn = int((~pred & true).sum())

    total = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / total if total else 0.0
    return Metrics(accuracy, precision, recall, f1, tp, fp, tn, fn, dict(cost or {}))


@dataclass
class SyntheticCluster:
    size: int
    purity: float
    centroid: Sequence[float]
    spread: float = 1.0


@dataclass
class SyntheticSpec:
    clusters: List[SyntheticCluster]
    dim: int
    seed: int = 0
    n: Optional[int] = None

    def __post_init__(self):
        if self.n is None:
            self.n = sum(c.size for c in self.clusters)
        self.validate()

    def validate(self) -> "SyntheticSpec":
        if sum(c.size for c in self.clusters) != self.n:
            raise ConfigError(f"cluster sizes sum to {sum(c.size for c in self.clusters)}, expected n={self.n}")
        for c in self.clusters:
            if not 0.0 <= c.purity <= 1.0:
                raise ConfigError(f"purity must be in [0, 1], got {c.purity}")
            if c.size < 0 or c.spread < 0:
                raise ConfigError("cluster size and spread must be nonnegative")
            if len(c.centroid) != self.dim:
                raise ConfigError(f"centroid has {len(c.centroid)} entries, expected dim={self.dim}")
        return self

    @classmethod
    def separated(cls, sizes: Sequence[int], purities: Sequence[float], dim: int = 8,
                  separation: float = 50.0, spread: float = 1.0, seed: int = 0) -> "SyntheticSpec":
        """Clusters on distinct coordinate axes, `separation` apart from the origin."""
        clusters = []
        for i, (size, purity) in enumerate(zip(sizes, purities)):
            centroid = [0.0] * dim
            centroid[i % dim] = separation * (1 + i // dim)
            clusters.append(SyntheticCluster(size=size, purity=purity, centroid=centroid, spread=spread))
        return cls(clusters=clusters, dim=dim, seed=seed)


@dataclass
class SyntheticWorkload:
    table: Table
    embeddings: EmbeddingSet
    probabilities: Dict[int, float]
    truth: Dict[int, bool]
    cluster_of: Dict[int, int]

    def column_oracle(self, cache: Optional[OutcomeCache] = None) -> ColumnMockOracle:
        return ColumnMockOracle(TRUTH_COLUMN, cache=cache)

    def bernoulli_oracle(self, seed: int = 0) -> BernoulliMockOracle:
        return BernoulliMockOracle(self.probabilities, seed=seed)


def gen_synthetic(spec: SyntheticSpec) -> SyntheticWorkload:
    """Gaussian blobs around each centroid, with hidden Bernoulli(purity) labels per record."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    records: List[Record] = []
    embeddings = EmbeddingSet(dim=spec.dim)
    probabilities: Dict[int, float] = {}
    truth: Dict[int, bool] = {}
    cluster_of: Dict[int, int] = {}

    next_id = 0
    for c, cluster in enumerate(spec.clusters):
        vectors = np.asarray(cluster.centroid) + cluster.spread * rng.standard_normal((cluster.size, spec.dim))
        labels = rng.random(cluster.size) < cluster.purity
        words = rng.integers(0, 50, size=(cluster.size, 3))
        for i in range(cluster.size):
            rid = next_id
            next_id += 1
            text = f"topic{c} " + " ".join(f"word{c}_{w}" for w in words[i])
            records.append(Record(id=rid, columns={TEXT_COLUMN: text, TRUTH_COLUMN: str(bool(labels[i]))}))
            embeddings.add(rid, vectors[i])
            probabilities[rid] = cluster.purity
            truth[rid] = bool(labels[i])
            cluster_of[rid] = c

    table = Table(records=tuple(records), column_schema=(TEXT_COLUMN, TRUTH_COLUMN))
    return SyntheticWorkload(table, embeddings, probabilities, truth, cluster_of)


def empirical_tail_frequency(n: int, mu: float, k: int, epsilon: float, resamples: int,
                             rng: np.random.Generator) -> float:
    """
    Frequency of |mean_hat - mean| >= epsilon over `resamples` size-k samples without
    replacement from a 0/1 population of size n with round(mu * n) ones.
    """
    ones = int(round(mu * n))
    mean = ones / n
    hits = rng.hypergeometric(ones, n - ones, k, size=resamples)
    deviation = np.abs(hits / k - mean)
    return float((deviation >= epsilon - 1e-12).mean())


def mc_sigma(p: float, resamples: int) -> float:
    p = min(max(p, 0.0), 1.0)
    return math.sqrt(p * (1 - p) / resamples)


def bernstein_grid(
    ns: Sequence[int],
    mus: Sequence[float],
    ks: Sequence[int],
    epsilons: Sequence[float],
    resamples: int = 10_000,
    seed: int = 0,
) -> pd.DataFrame:
    """Empirical tail frequency vs the finite-population Bernstein bound at every grid point."""
    rows = []
    for n in ns:
        for mu in mus:
            for k in ks:
                for eps in epsilons:
                    rng = np.random.default_rng(derive_seed(seed, n, mu, k, eps))
                    empirical = empirical_tail_frequency(n, mu, k, eps, resamples, rng)
                    mean = round(mu * n) / n
                    analytic = bernstein_tail(k, n, eps, mean * (1 - mean))
                    slack = MC_SIGMAS * max(mc_sigma(empirical, resamples), mc_sigma(analytic, resamples))
                    rows.append({
                        "n": n, "mu": mu, "k": k, "epsilon": eps,
                        "empirical": empirical, "analytic": analytic,
                        "mc_sigma": slack / MC_SIGMAS, "ok": empirical <= analytic + slack,
                    })
    return pd.DataFrame(rows)


@dataclass
class BoundReport:
    trials: int
    voted_trials: int
    xi: float
    planned: bool
    ceiling: float
    failure_probability: float
    mean_disagreement: float
    max_disagreement: float
    breach_fraction: float
    tail: List[dict] = field(default_factory=list)
    per_trial: List[dict] = field(default_factory=list)

    def to_dict(self, include_trials: bool = False) -> dict:
        data = asdict(self)
        if not include_trials:
            data.pop("per_trial")
        return data


def _planned_xi(cfg: FilterConfig, params: PlannerParams) -> Optional[float]:
    xi = xi_simvote(params) if cfg.strategy == "sim" else xi_univote(params)
    if isinstance(xi, Infeasible) or xi <= 0:
        return None
    return xi


def validate_bound(spec: SyntheticSpec, cfg: FilterConfig, params: PlannerParams, trials: int) -> BoundReport:
    """
    Run the filter against a Bernoulli mock oracle over seeded trials and compare the
    vote disagreement with fresh oracle redraws against the guaranteed ceiling.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    workload = gen_synthetic(spec)

    xi = _planned_xi(cfg, params)
    planned = xi is not None
    if not planned:
        logger.warning("⚠️ Planner could not certify a sample ratio; keeping xi=%s", cfg.xi)
        xi = cfg.xi
    cfg = replace(cfg, xi=xi).validate()
    ceiling = error_ceiling(cfg.thresholds, params.epsilon)

    members: Dict[int, List[int]] = {}
    for rid in workload.table.ids():
        members.setdefault(workload.cluster_of[rid], []).append(rid)
    tail_hits = {c: 0 for c in members}

    per_trial = []
    for t in range(trials):
        trial_seed = derive_seed(spec.seed, "trial", t)
        oracle = workload.bernoulli_oracle(seed=trial_seed)
        result = semantic_filter(workload.table, workload.embeddings, SYNTHETIC_PREDICATE,
                                 replace(cfg, seed=trial_seed), oracle)

        voted = [rid for rid, p in result.provenance.items() if p is Provenance.VOTE]
        row = {"trial": t, "voted": len(voted), "llm_calls": result.stats.llm_calls,
               "disagreement": None, "breach": False}
        if voted:
            disagree = sum(1 for rid in voted if result.labels[rid] != oracle.redraw(rid, stream=1))
            row["disagreement"] = disagree / len(voted)
            row["breach"] = row["disagreement"] > ceiling
        per_trial.append(row)

        # raw sample means of each generating cluster against its realized oracle mean
        for c, ids in members.items():
            sampled = sample_cluster(ids, xi, cfg.min_sample, derive_seed(trial_seed, "tail", c))
            mean = sum(oracle.redraw(rid) for rid in ids) / len(ids)
            mean_hat = sum(oracle.redraw(rid) for rid in sampled) / len(sampled)
            if abs(mean_hat - mean) >= params.epsilon:
                tail_hits[c] += 1

    tail = []
    for c, ids in members.items():
        n, p = len(ids), spec.clusters[c].purity
        k = sample_size(n, xi, cfg.min_sample)
        tail.append({
            "cluster": c, "size": n, "k": k,
            "empirical": tail_hits[c] / trials,
            "analytic": bernstein_tail(k, n, params.epsilon, p * (1 - p)) if n else 1.0,
        })

    voted_rows = [r for r in per_trial if r["disagreement"] is not None]
    disagreements = [r["disagreement"] for r in voted_rows]
    report = BoundReport(
        trials=trials,
        voted_trials=len(voted_rows),
        xi=xi,
        planned=planned,
        ceiling=ceiling,
        failure_probability=failure_probability(params.l, spec.n),
        mean_disagreement=float(np.mean(disagreements)) if disagreements else 0.0,
        max_disagreement=float(np.max(disagreements)) if disagreements else 0.0,
        breach_fraction=(sum(r["breach"] for r in voted_rows) / len(voted_rows)) if voted_rows else 0.0,
        tail=tail,
        per_trial=per_trial,
    )
    logger.info(
        "✅ %d/%d trials voted; mean disagreement %.4f vs ceiling %.2f; breach fraction %.4f",
        report.voted_trials, trials, report.mean_disagreement, ceiling, report.breach_fraction,
    )
    return report


def export_trials(report: BoundReport, path: str) -> None:
    """Per-trial rows as CSV for external plotting."""
    ensure_directory_exists(path)
    pd.DataFrame(report.per_trial).to_csv(path, index=False)
    logger.info("✅ Trial table exported to: %s", path)
