"""
Command-line surface of the semantic filter: embed, cluster, plan, filter, eval, simulate.

stdout carries one JSON document per command; human-readable status goes to stderr.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional

from clustering import build_lexicon, cluster_label_distribution, kmeans, write_partition
from config import (
    DEFAULT_EPSILON_SWEEP,
    DEFAULT_FAILURE_BASE,
    DEFAULT_MAX_CHUNK_TOKENS,
    DEFAULT_SEED,
    DEFAULT_WEIGHT_SKEW,
    EmbeddingConfig,
    FilterConfig,
    OracleConfig,
    get_common_parser,
    load_filter_config,
)
from data_model import TABLE_FORMATS, Predicate, load_table
from embedding_store import HashingEmbeddingProvider, HttpEmbeddingProvider, embed_table, read_embeddings, write_embeddings
from engine import read_result, reference_filter, semantic_filter, write_result
from errors import ConfigError, FilterAborted, SemanticFilterError
from evalsim import SyntheticSpec, bernstein_grid, compute_metrics, export_trials, validate_bound
from file_utils import content_hash, get_artifact_path, read_json, should_process_file, write_json
from log_utils import configure_logging
from oracle import ColumnMockOracle, HttpOracle, OutcomeCache
from planner import BERNOULLI_MAX_VARIANCE, Infeasible, PlannerParams, plan_sweep, xi_simvote, xi_univote
from voting import Thresholds

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
FILTER_STRATEGIES = ["uni", "sim", "reference"]
ORACLE_KINDS = ["http", "mock"]


@dataclass
class RunManifest:
    """Everything needed to rerun a command; wall-clock timing lives in the stats file."""

    command: str
    seed: int
    config: dict
    inputs: dict
    outputs: dict
    options: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        if data.get("version") != MANIFEST_VERSION:
            raise ConfigError(f"unsupported manifest version {data.get('version')}, expected {MANIFEST_VERSION}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid manifest: {e}") from e

    def write(self, path: str) -> None:
        write_json(path, self.to_dict())
        logger.info("✅ Manifest written to: %s", path)


def emit(payload) -> None:
    print(json.dumps(payload, sort_keys=True))


def _table_inputs(args) -> dict:
    return {
        "path": args.table,
        "hash": content_hash(args.table),
        "format": args.format,
        "id_column": args.id_column,
        "hash_ids": args.hash_ids,
    }


def _load_table_from(inputs: dict):
    return load_table(
        inputs["path"], table_format=inputs.get("format"),
        id_column=inputs.get("id_column"), hash_ids=inputs.get("hash_ids", False),
    )


def _check_output(path: str, force: bool) -> None:
    if not should_process_file(path, force):
        raise ConfigError(f"output {path} already exists; pass --force to overwrite")


def _add_table_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--table", required=required, help="Input table (JSONL or CSV)")
    parser.add_argument("--format", choices=TABLE_FORMATS, default=None, help="Table format (default: from suffix)")
    parser.add_argument("--id-column", default=None, help="Column holding record ids (default: row number)")
    parser.add_argument("--hash-ids", action="store_true", help="Hash string ids in --id-column to u64")


# ---- embed ----

def cmd_embed(args) -> int:
    if not should_process_file(args.output, args.force):
        logger.info("⏭️ Skipping embedding, %s already exists (use --force to rebuild)", args.output)
        emit({"output": args.output, "skipped": True})
        return 0

    table = load_table(args.table, args.format, args.id_column, args.hash_ids)
    missing = [c for c in args.columns if c not in table.column_schema]
    if missing and len(table):
        raise ConfigError(f"columns {missing} are not in the table schema {list(table.column_schema)}")

    if args.provider == "hashing":
        provider = HashingEmbeddingProvider(dim=args.dim)
        parallelism = args.parallelism or 1
        batch_size = args.batch_size or 64
    else:
        cfg = EmbeddingConfig.from_env(
            base_url=args.base_url, model=args.model,
            batch_size=args.batch_size, parallelism=args.parallelism,
        )
        provider = HttpEmbeddingProvider(cfg)
        parallelism, batch_size = cfg.parallelism, cfg.batch_size

    start = time.perf_counter()
    embeddings = embed_table(
        table, args.columns, provider,
        max_chunk_tokens=args.max_chunk_tokens, batch_size=batch_size, parallelism=parallelism,
    )
    write_embeddings(embeddings, args.output)

    RunManifest(
        command="embed",
        seed=0,
        config={"provider": args.provider, "dim": embeddings.dim, "columns": list(args.columns),
                "max_chunk_tokens": args.max_chunk_tokens, "model": args.model},
        inputs={"table": _table_inputs(args)},
        outputs={"embeddings": args.output},
    ).write(get_artifact_path(args.output, "manifest"))
    emit({"output": args.output, "records": len(embeddings), "dim": embeddings.dim,
          "seconds": round(time.perf_counter() - start, 3)})
    return 0


# ---- cluster ----

def cmd_cluster(args) -> int:
    _check_output(args.output, args.force)
    embeddings = read_embeddings(args.embeddings)
    cfg = load_filter_config(args.config)
    if args.k is not None:
        cfg.k = args.k
    if args.lam is not None:
        cfg.distance = replace(cfg.distance, lam=args.lam)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()

    table = None
    if args.table:
        table = load_table(args.table, args.format, args.id_column, args.hash_ids)
    elif args.truth_column or not cfg.distance.is_euclidean:
        raise ConfigError("--table is required with --truth-column or --lambda < 1")

    ids = table.ids() if table is not None else embeddings.ids()
    lexicon = None
    if not cfg.distance.is_euclidean:
        lexicon = build_lexicon(table, args.lexicon_columns or list(table.column_schema), cfg.distance)

    partition = kmeans(ids, embeddings, cfg.k, cfg.distance, seed=cfg.seed, max_iters=cfg.max_iters, lex=lexicon)
    write_partition(partition, args.output)
    logger.info("✅ %d clusters written to: %s", len(partition.clusters), args.output)

    payload = {
        "output": args.output,
        "clusters": [{"cluster": c.cluster_id, "size": len(c)} for c in partition.clusters],
        "iterations": partition.iterations,
        "objective": partition.objective[-1] if partition.objective else None,
    }
    if args.truth_column:
        distribution = cluster_label_distribution(partition, table.truth_labels(args.truth_column))
        logger.info("📊 Label distribution per cluster:\n%s", distribution.to_string(index=False))
        payload["distribution"] = json.loads(distribution.to_json(orient="records"))

    inputs = {"embeddings": {"path": args.embeddings, "hash": content_hash(args.embeddings)}}
    if table is not None:
        inputs["table"] = _table_inputs(args)
    RunManifest(
        command="cluster", seed=cfg.seed, config=cfg.to_dict(), inputs=inputs, outputs={"partition": args.output},
    ).write(get_artifact_path(args.output, "manifest"))
    emit(payload)
    return 0


# ---- plan ----

def cmd_plan(args) -> int:
    th = Thresholds(lb=args.lb, ub=args.ub)
    sweep = plan_sweep(args.epsilon, args.sigma_sq, args.l, args.v, th, n=args.n)
    logger.info("📊 Sample-ratio plan (l=%s, sigma^2=%s, v=%s):\n%s", args.l, args.sigma_sq, args.v,
                sweep.to_string(index=False))
    print(sweep.to_json(orient="records"))
    return 0


# ---- filter ----

def _filter_config(args) -> FilterConfig:
    cfg = load_filter_config(args.config)
    overrides = {
        "k": args.k, "min_sample": args.min_sample, "max_depth": args.max_depth, "seed": args.seed,
        "weight_skew": args.weight_skew,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.strategy in ("uni", "sim"):
        cfg.strategy = args.strategy
    if args.no_recluster:
        cfg.recluster = False
    if args.lam is not None:
        cfg.distance = replace(cfg.distance, lam=args.lam)
    if args.lb is not None or args.ub is not None:
        lb = args.lb if args.lb is not None else cfg.thresholds.lb
        ub = args.ub if args.ub is not None else (1.0 - lb if args.lb is not None else cfg.thresholds.ub)
        cfg.thresholds = Thresholds(lb=lb, ub=ub)

    if args.xi is not None:
        cfg.xi = args.xi
    elif args.epsilon is not None:
        params = PlannerParams(epsilon=args.epsilon, l=args.l, sigma_hat_sq=args.sigma_sq, v=cfg.weight_skew)
        xi = xi_simvote(params) if cfg.strategy == "sim" else xi_univote(params)
        if isinstance(xi, Infeasible):
            raise ConfigError(
                f"no sample ratio certifies epsilon={args.epsilon} at l={args.l} "
                f"(radicand {xi.radicand:.4g}); relax epsilon, raise l, or use --strategy reference"
            )
        if xi <= 0:
            raise ConfigError("planner returned xi=0 (l=1); pass --xi explicitly")
        logger.info("🧮 Planner chose xi=%.6f for epsilon=%s", xi, args.epsilon)
        cfg.xi = xi
    return cfg.validate()


def _manifest_from_args(args) -> RunManifest:
    missing = [flag for flag, value in (("--table", args.table), ("--predicate", args.predicate),
                                        ("--output", args.output)) if not value]
    if args.strategy != "reference" and not args.embeddings:
        missing.append("--embeddings")
    if missing:
        args.parser.error(f"the following arguments are required: {', '.join(missing)}")
    if args.oracle == "mock" and not args.truth_column:
        args.parser.error("--oracle mock requires --truth-column")

    cfg = _filter_config(args)
    inputs = {"table": _table_inputs(args)}
    if args.embeddings:
        inputs["embeddings"] = {"path": args.embeddings, "hash": content_hash(args.embeddings)}
    options = {
        "strategy": "reference" if args.strategy == "reference" else cfg.strategy,
        "predicate": {"template": args.predicate, "instruction": args.instruction},
        "oracle": args.oracle,
        "truth_column": args.truth_column,
        "cache": args.cache,
        "lexicon_columns": args.lexicon_columns,
        "model": args.model,
        "base_url": args.base_url,
    }
    if args.epsilon is not None:
        options["planner"] = {"epsilon": args.epsilon, "l": args.l, "sigma_hat_sq": args.sigma_sq}
    return RunManifest(command="filter", seed=cfg.seed, config=cfg.to_dict(), inputs=inputs,
                       outputs={"result": args.output}, options=options)


def _replay_manifest(args) -> RunManifest:
    manifest = RunManifest.from_dict(read_json(args.replay))
    if manifest.command != "filter":
        raise ConfigError(f"{args.replay} records a '{manifest.command}' run, not a filter run")
    for name, entry in manifest.inputs.items():
        if content_hash(entry["path"]) != entry["hash"]:
            raise ConfigError(f"{name} input {entry['path']} changed since the manifest was written")
    if args.output:
        manifest.outputs = {"result": args.output}
    logger.info("🔁 Replaying %s", args.replay)
    return manifest


def _build_oracle(options: dict):
    cache = options.get("cache")
    if options["oracle"] == "mock":
        return ColumnMockOracle(options["truth_column"], cache=OutcomeCache(cache) if cache else None)
    cfg = OracleConfig.from_env(cache_path=cache, model=options.get("model"), base_url=options.get("base_url"))
    return HttpOracle(cfg)


def cmd_filter(args) -> int:
    manifest = _replay_manifest(args) if args.replay else _manifest_from_args(args)
    output = manifest.outputs["result"]
    _check_output(output, args.force)

    options = manifest.options
    cfg = FilterConfig.from_dict(manifest.config).validate()
    predicate = Predicate(**options["predicate"])
    table = _load_table_from(manifest.inputs["table"])
    if len(table):
        predicate.validate(table.column_schema)

    embeddings = None
    lexicon = None
    if options["strategy"] != "reference":
        embeddings = read_embeddings(manifest.inputs["embeddings"]["path"])
        if not cfg.distance.is_euclidean and len(table):
            columns = options.get("lexicon_columns") or predicate.referenced_columns
            lexicon = build_lexicon(table, columns, cfg.distance)

    # every argument is checked before the oracle makes its first call
    oracle = _build_oracle(options)
    stats_path = get_artifact_path(output, "stats")
    try:
        if options["strategy"] == "reference":
            result = reference_filter(table, predicate, oracle)
        else:
            result = semantic_filter(table, embeddings, predicate, cfg, oracle, lexicon=lexicon)
    except FilterAborted as e:
        partial_path = get_artifact_path(output, "partial")
        write_result(e.partial, partial_path)
        logger.error("❌ Oracle failure; %d partial labels saved to %s", len(e.partial.labels), partial_path)
        raise

    write_result(result, output, stats_path)
    manifest.write(get_artifact_path(output, "manifest"))
    logger.info("✅ Results written to: %s", output)
    emit({"output": output, "stats": result.stats_dict()})
    return 0


# ---- eval ----

def cmd_eval(args) -> int:
    table = load_table(args.table, args.format, args.id_column, args.hash_ids)
    truth = table.truth_labels(args.truth_column)
    result = read_result(args.result)

    cost = {}
    stats_path = args.stats or get_artifact_path(args.result, "stats")
    if os.path.exists(stats_path):
        stats = read_json(stats_path).get("stats", {})
        cost = {key: stats[key] for key in ("llm_calls", "cache_hits", "prompt_tokens", "completion_tokens") if key in stats}

    metrics = compute_metrics(result.labels, truth, cost)
    logger.info("📊 accuracy=%.4f precision=%.4f recall=%.4f f1=%.4f",
                metrics.accuracy, metrics.precision, metrics.recall, metrics.f1)
    emit(metrics.to_dict())
    return 0


# ---- simulate ----

def cmd_simulate(args) -> int:
    if args.grid:
        grid = bernstein_grid(args.grid_n, args.grid_mu, args.grid_k, args.grid_epsilon,
                              resamples=args.resamples, seed=args.seed or DEFAULT_SEED)
        failing = grid[~grid["ok"]]
        if len(failing):
            logger.warning("⚠️ %d grid points exceed the bound:\n%s", len(failing), failing.to_string(index=False))
        else:
            logger.info("✅ All %d grid points within the bound", len(grid))
        print(grid.to_json(orient="records"))
        return 0

    if len(args.sizes) != len(args.purities):
        args.parser.error("--sizes and --purities must have the same length")
    spec = SyntheticSpec.separated(args.sizes, args.purities, dim=args.dim, separation=args.separation,
                                   spread=args.spread, seed=args.seed or DEFAULT_SEED)
    cfg = load_filter_config(args.config)
    for key, value in {"k": args.k, "min_sample": args.min_sample, "max_depth": args.max_depth}.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.strategy:
        cfg.strategy = args.strategy
    if args.lb is not None:
        cfg.thresholds = Thresholds(lb=args.lb)
    params = PlannerParams(epsilon=args.epsilon, l=args.l, sigma_hat_sq=args.sigma_sq, v=cfg.weight_skew, n=spec.n)
    if args.output:
        _check_output(args.output, args.force)

    report = validate_bound(spec, cfg.validate(), params, args.trials)
    if args.output:
        export_trials(report, args.output)
        RunManifest(
            command="simulate", seed=spec.seed, config=cfg.to_dict(), inputs={},
            outputs={"trials": args.output},
            options={"sizes": list(args.sizes), "purities": list(args.purities), "dim": args.dim,
                     "trials": args.trials, "planner": asdict(params)},
        ).write(get_artifact_path(args.output, "manifest"))
    emit(report.to_dict())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = get_common_parser()
    parser = argparse.ArgumentParser(prog="semfilter", description="LLM semantic filtering by clustering, sampling and voting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", parents=[common], help="Embed table rows")
    _add_table_args(p)
    p.add_argument("--columns", nargs="+", required=True, help="Columns fused into each record's text")
    p.add_argument("--output", required=True, help="Embedding file (.emb binary or .jsonl)")
    p.add_argument("--provider", choices=["http", "hashing"], default="http")
    p.add_argument("--dim", type=int, default=64, help="Dimension for the hashing provider")
    p.add_argument("--model", default=None)
    p.add_argument("--base-url", default=None)
    p.add_argument("--max-chunk-tokens", type=int, default=DEFAULT_MAX_CHUNK_TOKENS)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--parallelism", type=int, default=None)
    p.set_defaults(func=cmd_embed, parser=p)

    p = sub.add_parser("cluster", parents=[common], help="Partition embeddings with k-means")
    _add_table_args(p, required=False)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--output", required=True, help="Partition JSONL")
    p.add_argument("--config", default=None, help="JSON file of FilterConfig fields")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="Embedding weight of the distance mix")
    p.add_argument("--lexicon-columns", nargs="+", default=None)
    p.add_argument("--truth-column", default=None, help="Report per-cluster label distribution")
    p.set_defaults(func=cmd_cluster, parser=p)

    p = sub.add_parser("plan", parents=[common], help="Sample ratios certified per error tolerance")
    p.add_argument("--epsilon", type=float, nargs="+", default=DEFAULT_EPSILON_SWEEP)
    p.add_argument("--sigma-sq", type=float, default=BERNOULLI_MAX_VARIANCE, help="Label variance estimate")
    p.add_argument("--l", type=float, default=DEFAULT_FAILURE_BASE, help="Failure base")
    p.add_argument("--v", type=float, default=DEFAULT_WEIGHT_SKEW, help="SimVote weight-skew bound")
    p.add_argument("--lb", type=float, default=0.15)
    p.add_argument("--ub", type=float, default=None)
    p.add_argument("--n", type=int, default=0)
    p.set_defaults(func=cmd_plan, parser=p)

    p = sub.add_parser("filter", parents=[common], help="Run the semantic filter")
    _add_table_args(p, required=False)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--predicate", default=None, help="Template with {column} placeholders")
    p.add_argument("--instruction", default=None)
    p.add_argument("--output", default=None, help="Result JSONL")
    p.add_argument("--config", default=None, help="JSON file of FilterConfig fields; flags override it")
    p.add_argument("--strategy", choices=FILTER_STRATEGIES, default=None)
    p.add_argument("--k", type=int, default=None)
    ratio = p.add_mutually_exclusive_group()
    ratio.add_argument("--xi", type=float, default=None, help="Sample ratio")
    ratio.add_argument("--epsilon", type=float, default=None, help="Error tolerance; the planner derives xi")
    p.add_argument("--sigma-sq", type=float, default=BERNOULLI_MAX_VARIANCE)
    p.add_argument("--l", type=float, default=DEFAULT_FAILURE_BASE)
    p.add_argument("--lb", type=float, default=None)
    p.add_argument("--ub", type=float, default=None, help="Default 1 - lb")
    p.add_argument("--min-sample", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--weight-skew", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--lexicon-columns", nargs="+", default=None)
    p.add_argument("--no-recluster", action="store_true", help="Commit undetermined tuples by score >= 0.5")
    p.add_argument("--oracle", choices=ORACLE_KINDS, default="http")
    p.add_argument("--truth-column", default=None, help="Label column read by the mock oracle")
    p.add_argument("--cache", default=None, help="Oracle outcome cache (JSONL)")
    p.add_argument("--model", default=None)
    p.add_argument("--base-url", default=None)
    p.add_argument("--replay", default=None, metavar="MANIFEST", help="Rerun a recorded filter run")
    p.set_defaults(func=cmd_filter, parser=p)

    p = sub.add_parser("eval", parents=[common], help="Score a result against a truth column")
    _add_table_args(p)
    p.add_argument("--result", required=True)
    p.add_argument("--truth-column", required=True)
    p.add_argument("--stats", default=None, help="Stats JSON for cost columns (default: beside the result)")
    p.set_defaults(func=cmd_eval, parser=p)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo checks of the error guarantees")
    p.add_argument("--grid", action="store_true", help="Bernstein tail grid instead of filter trials")
    p.add_argument("--grid-n", type=int, nargs="+", default=[1000])
    p.add_argument("--grid-mu", type=float, nargs="+", default=[0.5, 0.9, 0.99])
    p.add_argument("--grid-k", type=int, nargs="+", default=[50, 100, 200])
    p.add_argument("--grid-epsilon", type=float, nargs="+", default=[0.05, 0.1, 0.2])
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("--sizes", type=int, nargs="+", default=[14_608])
    p.add_argument("--purities", type=float, nargs="+", default=[0.9942])
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--separation", type=float, default=50.0)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--epsilon", type=float, default=0.10)
    p.add_argument("--sigma-sq", type=float, default=BERNOULLI_MAX_VARIANCE)
    p.add_argument("--l", type=float, default=DEFAULT_FAILURE_BASE)
    p.add_argument("--config", default=None)
    p.add_argument("--strategy", choices=["uni", "sim"], default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lb", type=float, default=None)
    p.add_argument("--min-sample", type=int, default=None)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--output", default=None, help="Per-trial CSV")
    p.set_defaults(func=cmd_simulate, parser=p)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_json)
    try:
        return args.func(args)
    except (SemanticFilterError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
