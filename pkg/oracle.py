"""
The LLM predicate oracle: one prompt per record, a definite True/False per prompt.

Every oracle kind shares the same batch driver: consult the outcome cache,
dispatch misses with bounded parallelism, append fresh results to the cache,
and return outcomes sorted by record id.
"""

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import requests

from config import OracleConfig, resolve_api_key
from data_model import Predicate, Record, parse_bool, render_prompt
from embedding_store import build_session
from errors import (
    OracleError,
    OracleTransportError,
    TableFormatError,
    TruthLabelError,
    UndecidableCompletionError,
)
from file_utils import ensure_directory_exists
from log_utils import log_progress

logger = logging.getLogger(__name__)

CLARIFICATION = "Respond with only the single word True or the single word False."
LABEL_PATTERN = re.compile(r"\b(true|false)\b", re.IGNORECASE)
PROGRESS_EVERY = 500


class OutcomeSource(str, Enum):
    LLM = "llm"
    CACHE = "cache"
    MOCK = "mock"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class OracleOutcome:
    record_id: int
    label: bool
    prompt_tokens: int = 0
    completion_tokens: int = 0
    source: OutcomeSource = OutcomeSource.LLM


@dataclass
class OracleStats:
    llm_calls: int = 0
    cache_hits: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def snapshot(self) -> "OracleStats":
        return replace(self)

    def since(self, earlier: "OracleStats") -> "OracleStats":
        return OracleStats(*(now - then for now, then in zip(asdict(self).values(), asdict(earlier).values())))


def parse_label(completion: str) -> bool:
    """First standalone 'true' or 'false' token, case-insensitive."""
    match = LABEL_PATTERN.search(completion or "")
    if match is None:
        raise UndecidableCompletionError(completion)
    return match.group(1).lower() == "true"


def predicate_key(predicate: Predicate) -> str:
    """64-bit hash of the canonical predicate text, as 16 hex digits."""
    return hashlib.blake2b(predicate.canonical_text().encode("utf-8"), digest_size=8).hexdigest()


def estimate_tokens(text: str) -> int:
    return len(text.split())


class OutcomeCache:
    """Append-only JSONL cache of {"pkey", "rid", "label", "pt", "ct"} rows."""

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.entries: Dict[Tuple[str, int], Tuple[bool, int, int]] = {}
        self._lock = threading.Lock()
        if path and os.path.exists(path):
            self._load(path)

    def _load(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    self.entries[(row["pkey"], int(row["rid"]))] = (bool(row["label"]), int(row["pt"]), int(row["ct"]))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    logger.warning("⚠️ Skipping unreadable cache line %d in %s", line_number, path)
        logger.info("✅ Loaded %d cached outcomes from %s", len(self.entries), path)

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, pkey: str, record_id: int) -> Optional[OracleOutcome]:
        hit = self.entries.get((pkey, record_id))
        if hit is None:
            return None
        label, pt, ct = hit
        return OracleOutcome(record_id, label, pt, ct, OutcomeSource.CACHE)

    def put(self, pkey: str, outcome: OracleOutcome) -> None:
        with self._lock:
            self.entries[(pkey, outcome.record_id)] = (outcome.label, outcome.prompt_tokens, outcome.completion_tokens)
            if not self.path:
                return
            ensure_directory_exists(self.path)
            with open(self.path, "a", encoding="utf-8") as f:
                row = {
                    "pkey": pkey,
                    "rid": outcome.record_id,
                    "label": outcome.label,
                    "pt": outcome.prompt_tokens,
                    "ct": outcome.completion_tokens,
                }
                f.write(json.dumps(row) + "\n")


class Oracle:
    """Batch driver; subclasses implement `_dispatch` for a single record."""

    def __init__(self, cache: Optional[OutcomeCache] = None, parallelism: int = 1):
        self.cache = cache
        self.parallelism = max(1, parallelism)
        self.stats = OracleStats()
        self._lock = threading.Lock()

    def _dispatch(self, predicate: Predicate, record: Record) -> OracleOutcome:
        raise NotImplementedError

    def invoke_batch(
        self,
        predicate: Predicate,
        records: Sequence[Record],
        source: Optional[OutcomeSource] = None,
    ) -> List[OracleOutcome]:
        """
        One outcome per record, sorted by record id regardless of completion order.
        Freshly dispatched outcomes are tagged with `source` when given; cache hits stay `cache`.
        """
        pkey = predicate_key(predicate)
        outcomes: Dict[int, OracleOutcome] = {}
        pending: List[Record] = []
        queued = set()
        for record in records:
            if record.id in outcomes or record.id in queued:
                continue
            cached = self.cache.get(pkey, record.id) if self.cache else None
            if cached is not None:
                outcomes[record.id] = cached
            else:
                queued.add(record.id)
                pending.append(record)

        with self._lock:
            self.stats.cache_hits += len(outcomes)

        if pending:
            start_time = time.time()
            done = 0

            def run(record: Record) -> OracleOutcome:
                nonlocal done
                outcome = self._dispatch(predicate, record)
                if self.cache is not None:
                    self.cache.put(pkey, outcome)
                with self._lock:
                    self.stats.llm_calls += 1
                    self.stats.prompt_tokens += outcome.prompt_tokens
                    self.stats.completion_tokens += outcome.completion_tokens
                    done += 1
                    if done % PROGRESS_EVERY == 0:
                        log_progress(logger, done, len(pending), start_time, "Oracle calls")
                return outcome if source is None else replace(outcome, source=source)

            if self.parallelism == 1:
                fresh = [run(record) for record in pending]
            else:
                with ThreadPoolExecutor(max_workers=self.parallelism) as pool:
                    fresh = list(pool.map(run, pending))
            outcomes.update({o.record_id: o for o in fresh})

        return [outcomes[rid] for rid in sorted(outcomes)]


class HttpOracle(Oracle):
    """POST {base}/v1/chat/completions against an OpenAI-compatible endpoint."""

    def __init__(self, cfg: OracleConfig, session: Optional[requests.Session] = None):
        cfg.validate()
        super().__init__(cache=OutcomeCache(cfg.cache_path), parallelism=cfg.parallelism)
        self.cfg = cfg
        self.session = session or build_session(cfg.retries)
        self.url = cfg.base_url.rstrip("/") + "/v1/chat/completions"
        self.api_key = resolve_api_key(cfg.api_key_env)

    def _complete(self, prompt: str, record_id: int) -> Tuple[str, int, int]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        }
        try:
            response = self.session.post(self.url, json=body, headers=headers, timeout=self.cfg.timeout)
            response.raise_for_status()
            data = response.json()
            text = data["choices"][0]["message"]["content"] or ""
        except requests.RequestException as e:
            raise OracleTransportError(f"record {record_id}: request to {self.url} failed: {e}") from e
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise OracleTransportError(f"record {record_id}: malformed completion response: {e}") from e
        usage = data.get("usage") or {}
        return text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))

    def _dispatch(self, predicate: Predicate, record: Record) -> OracleOutcome:
        prompt = render_prompt(predicate, record)
        text, pt, ct = self._complete(prompt, record.id)
        try:
            label = parse_label(text)
        except UndecidableCompletionError:
            logger.warning("⚠️ Undecidable completion for record %d, retrying once: %r", record.id, text)
            text, pt2, ct2 = self._complete(prompt + "\n" + CLARIFICATION, record.id)
            pt, ct = pt + pt2, ct + ct2
            try:
                label = parse_label(text)
            except UndecidableCompletionError:
                raise UndecidableCompletionError(text, record_id=record.id) from None
        return OracleOutcome(record.id, label, pt, ct, OutcomeSource.LLM)


class ColumnMockOracle(Oracle):
    """Label read from a ground-truth column of the record."""

    def __init__(self, truth_column: str, cache: Optional[OutcomeCache] = None):
        super().__init__(cache=cache)
        self.truth_column = truth_column

    def _dispatch(self, predicate: Predicate, record: Record) -> OracleOutcome:
        prompt = render_prompt(predicate, record)
        if self.truth_column not in record.columns:
            raise OracleError(f"record {record.id} has no '{self.truth_column}' column")
        try:
            label = parse_bool(record.columns[self.truth_column], self.truth_column)
        except TableFormatError as e:
            raise TruthLabelError(str(e), record_id=record.id) from e
        return OracleOutcome(record.id, label, estimate_tokens(prompt), 1, OutcomeSource.MOCK)


def _uniform(seed: int, record_id: int, stream: int) -> float:
    """Deterministic U[0, 1) from (seed, record id, stream)."""
    digest = hashlib.blake2b(f"{seed}:{record_id}:{stream}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2**64


class BernoulliMockOracle(Oracle):
    """
    Seeded per-record Bernoulli(p) answers.

    Draw `stream` for a record is a pure function of (seed, record id, stream):
    stream 0 is the oracle's answer, higher streams are independent redraws.
    """

    def __init__(self, probabilities: Mapping[int, float], seed: int = 0, cache: Optional[OutcomeCache] = None):
        super().__init__(cache=cache)
        self.probabilities = dict(probabilities)
        self.seed = seed

    def redraw(self, record_id: int, stream: int = 0) -> bool:
        try:
            p = self.probabilities[record_id]
        except KeyError:
            raise OracleError(f"no success probability for record {record_id}") from None
        return _uniform(self.seed, record_id, stream) < p

    def _dispatch(self, predicate: Predicate, record: Record) -> OracleOutcome:
        prompt = render_prompt(predicate, record)
        return OracleOutcome(record.id, self.redraw(record.id), estimate_tokens(prompt), 1, OutcomeSource.MOCK)
