"""
Clustering-sampling-voting semantic filter, plus the linear-scan reference.

Each depth round samples every cluster, labels the samples through the oracle,
votes the rest, and pools all undetermined tuples. The pool is re-clustered
with the same k until max_depth, after which (or once the pool is no larger
than min_sample) every remaining tuple goes to the oracle directly.
"""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from clustering import BM25Index, DistanceContext, kmeans
from config import FilterConfig
from data_model import Predicate, Table
from errors import DistanceError, FilterAborted, OracleError, TableFormatError
from file_utils import ensure_directory_exists
from oracle import Oracle, OracleOutcome, OracleStats, OutcomeSource
from planner import sample_size
from voting import VoteReport, context_similarity, sim_vote, uni_vote

logger = logging.getLogger(__name__)

COMMIT_THRESHOLD = 0.5


class Provenance(str, Enum):
    ORACLE = "oracle"
    VOTE = "vote"
    FALLBACK = "fallback"


@dataclass
class ClusterNode:
    cluster_id: int
    depth: int
    ids: Tuple[int, ...]
    sampled_ids: Tuple[int, ...] = ()
    outcomes: List[OracleOutcome] = field(default_factory=list)
    report: Optional[VoteReport] = None

    def summary(self) -> dict:
        positives = sum(1 for o in self.outcomes if o.label)
        row = {
            "depth": self.depth,
            "cluster": self.cluster_id,
            "size": len(self.ids),
            "sampled": len(self.sampled_ids),
            "sample_positives": positives,
            "voted_true": 0,
            "voted_false": 0,
            "undetermined": 0,
        }
        if self.report is not None:
            row["voted_true"] = len(self.report.positives)
            row["voted_false"] = len(self.report.negatives)
            row["undetermined"] = len(self.report.undetermined)
        return row


@dataclass
class FilterStats:
    llm_calls: int = 0
    cache_hits: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    recluster_rounds: int = 0
    wall_time: float = 0.0


@dataclass
class FilterResult:
    labels: Dict[int, bool] = field(default_factory=dict)
    provenance: Dict[int, Provenance] = field(default_factory=dict)
    stats: FilterStats = field(default_factory=FilterStats)
    cluster_log: List[dict] = field(default_factory=list)

    def positives(self) -> List[int]:
        return sorted(rid for rid, label in self.labels.items() if label)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"id": rid, "label": self.labels[rid], "provenance": self.provenance[rid].value}
            for rid in sorted(self.labels)
        ]
        return pd.DataFrame(rows, columns=["id", "label", "provenance"])

    def stats_dict(self) -> dict:
        stats = asdict(self.stats)
        stats["records"] = len(self.labels)
        stats["positives"] = len(self.positives())
        stats["by_provenance"] = {
            p.value: sum(1 for v in self.provenance.values() if v is p) for p in Provenance
        }
        return stats


def write_result(result: FilterResult, path: str, stats_path: Optional[str] = None) -> None:
    """JSONL rows {"id", "label", "provenance"} sorted by id, plus an optional stats JSON."""
    ensure_directory_exists(path)
    with open(path, "w", encoding="utf-8") as f:
        for rid in sorted(result.labels):
            row = {"id": rid, "label": result.labels[rid], "provenance": result.provenance[rid].value}
            f.write(json.dumps(row) + "\n")
    if stats_path:
        with open(stats_path, "w", encoding="utf-8") as f:
            json.dump({"stats": result.stats_dict(), "clusters": result.cluster_log}, f, indent=2, sort_keys=True)


def read_result(path: str) -> FilterResult:
    """Labels and provenance back from a result JSONL; stats are not stored there."""
    result = FilterResult()
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                rid = int(row["id"])
                result.labels[rid] = bool(row["label"])
                result.provenance[rid] = Provenance(row["provenance"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise TableFormatError(f"unreadable result row in {path}: {e}", line=line_number) from e
    return result


def derive_seed(master: int, *parts) -> int:
    """Independent u64 seed for (master, parts); processing order never matters."""
    tag = ":".join(str(p) for p in (master, *parts))
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


def sample_cluster(ids: Sequence[int], xi: float, min_sample: int, seed: int) -> Tuple[int, ...]:
    """Simple random sample without replacement of min(|ids|, max(ceil(xi |ids|), min_sample)) ids."""
    ids = list(ids)
    size = sample_size(len(ids), xi, min_sample)
    if size >= len(ids):
        return tuple(sorted(ids))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ids), size=size, replace=False)
    return tuple(sorted(ids[i] for i in picked))


def _apply_stats(result: FilterResult, oracle: Oracle, before: OracleStats, start: float) -> None:
    delta = oracle.stats.since(before)
    result.stats.llm_calls = delta.llm_calls
    result.stats.cache_hits = delta.cache_hits
    result.stats.prompt_tokens = delta.prompt_tokens
    result.stats.completion_tokens = delta.completion_tokens
    result.stats.wall_time = time.perf_counter() - start


def _vote(node: ClusterNode, cfg: FilterConfig, embeddings, lexicon) -> VoteReport:
    th = cfg.thresholds
    if cfg.strategy == "uni":
        return uni_vote(node.outcomes, node.ids, node.sampled_ids, th)
    context = DistanceContext(node.ids, embeddings, cfg.distance, lexicon)
    report = sim_vote(
        node.outcomes, node.ids, node.sampled_ids, th,
        sim=context_similarity(context), weight_skew=cfg.weight_skew,
    )
    if report.skew_violations:
        logger.warning(
            "⚠️ Cluster %d (depth %d): %d tuples have a vote weight above v/k = %.4f",
            node.cluster_id, node.depth, report.skew_violations, cfg.weight_skew / len(node.sampled_ids),
        )
    return report


def _record_outcomes(result: FilterResult, outcomes: List[OracleOutcome], provenance: Provenance) -> None:
    for outcome in outcomes:
        result.labels[outcome.record_id] = outcome.label
        result.provenance[outcome.record_id] = provenance


def semantic_filter(
    table: Table,
    embeddings,
    predicate: Predicate,
    cfg: FilterConfig,
    oracle: Oracle,
    lexicon: Optional[BM25Index] = None,
) -> FilterResult:
    """
    Label every record of `table` with as few oracle calls as the votes allow.

    Args:
        table: records to filter
        embeddings: EmbeddingSet covering every record id
        predicate: natural-language filter condition
        cfg: clustering, sampling and voting settings
        oracle: label source for sampled and fallback tuples
        lexicon: BM25 corpus, required when cfg.distance.lam < 1

    Returns:
        FilterResult with one label per record id
    """
    cfg.validate()
    start = time.perf_counter()
    before = oracle.stats.snapshot()
    result = FilterResult()

    ids = table.ids()
    if not ids:
        _apply_stats(result, oracle, before, start)
        return result
    predicate.validate(table.column_schema)
    missing = embeddings.missing(ids)
    if missing:
        raise DistanceError(f"{len(missing)} records have no embedding, e.g. {missing[:5]}")

    depth = 0
    pool = ids
    try:
        while True:
            partition = kmeans(
                pool, embeddings, cfg.k, cfg.distance,
                seed=derive_seed(cfg.seed, "partition", depth), max_iters=cfg.max_iters, lex=lexicon,
            )
            nodes = []
            for cluster in partition.clusters:
                sampled = sample_cluster(
                    cluster.member_ids, cfg.xi, cfg.min_sample,
                    derive_seed(cfg.seed, "sample", depth, cluster.cluster_id),
                )
                nodes.append(ClusterNode(cluster.cluster_id, depth, cluster.member_ids, sampled))

            # every sample of the round goes out as one batch
            batch = table.select(rid for node in nodes for rid in node.sampled_ids)
            by_id = {o.record_id: o for o in oracle.invoke_batch(predicate, batch)}
            undetermined: List[int] = []
            for node in nodes:
                node.outcomes = [by_id[rid] for rid in node.sampled_ids]
                _record_outcomes(result, node.outcomes, Provenance.ORACLE)
                if len(node.sampled_ids) == len(node.ids):
                    result.cluster_log.append(node.summary())
                    continue

                node.report = _vote(node, cfg, embeddings, lexicon)
                for rid in node.report.positives:
                    result.labels[rid], result.provenance[rid] = True, Provenance.VOTE
                for rid in node.report.negatives:
                    result.labels[rid], result.provenance[rid] = False, Provenance.VOTE
                if cfg.recluster:
                    undetermined.extend(node.report.undetermined)
                else:
                    for rid in node.report.undetermined:
                        result.labels[rid] = node.report.scores[rid] >= COMMIT_THRESHOLD
                        result.provenance[rid] = Provenance.VOTE
                result.cluster_log.append(node.summary())

            logger.info(
                "🔁 Depth %d: %d clusters, %d sampled, %d undetermined",
                depth, len(nodes), len(batch), len(undetermined),
            )
            if not undetermined:
                break
            if depth >= cfg.max_depth or len(undetermined) <= cfg.min_sample:
                logger.info("↩️ Falling back to direct oracle calls for %d tuples", len(undetermined))
                fresh = oracle.invoke_batch(
                    predicate, table.select(sorted(undetermined)), source=OutcomeSource.FALLBACK,
                )
                _record_outcomes(result, fresh, Provenance.FALLBACK)
                break
            depth += 1
            result.stats.recluster_rounds += 1
            pool = sorted(undetermined)
    except OracleError as e:
        _apply_stats(result, oracle, before, start)
        raise FilterAborted(e, result) from e

    _apply_stats(result, oracle, before, start)
    logger.info(
        "✅ Filtered %d records with %d oracle calls (%d positives)",
        len(result.labels), result.stats.llm_calls, len(result.positives()),
    )
    return result


def reference_filter(table: Table, predicate: Predicate, oracle: Oracle) -> FilterResult:
    """One oracle call per record."""
    if len(table):
        predicate.validate(table.column_schema)
    start = time.perf_counter()
    before = oracle.stats.snapshot()
    result = FilterResult()
    try:
        if len(table):
            _record_outcomes(result, oracle.invoke_batch(predicate, list(table)), Provenance.ORACLE)
    except OracleError as e:
        _apply_stats(result, oracle, before, start)
        raise FilterAborted(e, result) from e
    _apply_stats(result, oracle, before, start)
    return result
