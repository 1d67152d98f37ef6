"""
Per-record embeddings: acquisition, chunk averaging, and persistence.

Binary layout (little-endian):
    magic "CSVE" | u32 version=1 | u32 dim | u64 count | count x (u64 id, dim x f32)
"""

import hashlib
import json
import logging
import re
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Protocol, Sequence

import numpy as np
import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from config import EmbeddingConfig, resolve_api_key
from data_model import Record, Table
from errors import (
    BadMagicError,
    EmbeddingDimensionError,
    EmbeddingFormatError,
    EmbeddingProviderError,
    TruncatedFileError,
    VersionMismatchError,
)
from file_utils import ensure_directory_exists
from log_utils import log_progress

logger = logging.getLogger(__name__)

MAGIC = b"CSVE"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIQ")
RETRY_STATUSES = (429, 500, 502, 503, 504)


@dataclass
class EmbeddingSet:
    dim: int
    vectors: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise EmbeddingDimensionError(f"dim must be positive, got {self.dim}")
        for record_id, vector in list(self.vectors.items()):
            self.vectors[record_id] = self._checked(record_id, vector)

    def _checked(self, record_id: int, vector) -> np.ndarray:
        vector = np.asarray(vector, dtype=np.float32)
        if vector.shape != (self.dim,):
            raise EmbeddingDimensionError(
                f"vector for record {record_id} has shape {vector.shape}, expected ({self.dim},)"
            )
        if not np.all(np.isfinite(vector)):
            raise EmbeddingFormatError(f"vector for record {record_id} has non-finite entries")
        return vector

    def add(self, record_id: int, vector) -> None:
        self.vectors[record_id] = self._checked(record_id, vector)

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, record_id) -> bool:
        return record_id in self.vectors

    def ids(self) -> List[int]:
        return sorted(self.vectors)

    def matrix(self, ids: Sequence[int]) -> np.ndarray:
        """Float64 matrix with one row per id, in the given order."""
        if len(ids) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self.vectors[rid] for rid in ids]).astype(np.float64)

    def missing(self, ids: Iterable[int]) -> List[int]:
        return [rid for rid in ids if rid not in self.vectors]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet) or other.dim != self.dim:
            return False
        if self.vectors.keys() != other.vectors.keys():
            return False
        return all(np.array_equal(v, other.vectors[k]) for k, v in self.vectors.items())


class EmbeddingProvider(Protocol):
    def embed(self, texts: List[str]) -> List[np.ndarray]:
        ...


def build_session(retries: int) -> requests.Session:
    """Session with bounded exponential backoff on 429/5xx."""
    retry = Retry(
        total=retries,
        backoff_factor=0.5,
        status_forcelist=RETRY_STATUSES,
        allowed_methods=frozenset(["POST"]),
        raise_on_status=False,
    )
    session = requests.Session()
    session.mount("http://", HTTPAdapter(max_retries=retry))
    session.mount("https://", HTTPAdapter(max_retries=retry))
    return session


class HttpEmbeddingProvider:
    """POST {base}/v1/embeddings with an OpenAI-compatible body."""

    def __init__(self, cfg: EmbeddingConfig, session: Optional[requests.Session] = None):
        self.cfg = cfg.validate()
        self.session = session or build_session(cfg.retries)
        self.url = cfg.base_url.rstrip("/") + "/v1/embeddings"
        self.api_key = resolve_api_key(cfg.api_key_env)

    def embed(self, texts: List[str]) -> List[np.ndarray]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            response = self.session.post(
                self.url,
                json={"model": self.cfg.model, "input": texts},
                headers=headers,
                timeout=self.cfg.timeout,
            )
            response.raise_for_status()
            data = response.json()["data"]
        except requests.RequestException as e:
            raise EmbeddingProviderError(f"embedding request to {self.url} failed: {e}") from e
        except (KeyError, ValueError) as e:
            raise EmbeddingProviderError(f"malformed embedding response from {self.url}: {e}") from e

        if len(data) != len(texts):
            raise EmbeddingProviderError(f"expected {len(texts)} embeddings, got {len(data)}")
        return [np.asarray(item["embedding"], dtype=np.float64) for item in data]


class HashingEmbeddingProvider:
    """Deterministic bag-of-words feature hashing; lets the pipeline run offline."""

    def __init__(self, dim: int = 64):
        if dim < 1:
            raise EmbeddingDimensionError(f"dim must be positive, got {dim}")
        self.dim = dim

    def embed(self, texts: List[str]) -> List[np.ndarray]:
        vectors = []
        for text in texts:
            vector = np.zeros(self.dim)
            for token in re.findall(r"\w+", text.lower()):
                digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
                bucket = int.from_bytes(digest[:4], "little") % self.dim
                sign = 1.0 if digest[4] & 1 else -1.0
                vector[bucket] += sign
            norm = np.linalg.norm(vector)
            vectors.append(vector / norm if norm > 0 else vector)
        return vectors


def fused_text(record: Record, columns: Sequence[str]) -> str:
    """Referenced columns concatenated as 'col: value' lines."""
    return "\n".join(f"{column}: {record.columns.get(column, '')}" for column in columns)


def chunk_text(text: str, max_chunk_tokens: int) -> List[str]:
    """Split on whitespace-token boundaries into contiguous chunks of at most max_chunk_tokens."""
    if max_chunk_tokens < 1:
        raise ValueError(f"max_chunk_tokens must be positive, got {max_chunk_tokens}")
    tokens = text.split()
    if len(tokens) <= max_chunk_tokens:
        return [text]
    return [
        " ".join(tokens[start:start + max_chunk_tokens])
        for start in range(0, len(tokens), max_chunk_tokens)
    ]


def embed_table(
    table: Table,
    predicate_columns: Sequence[str],
    provider: EmbeddingProvider,
    max_chunk_tokens: int = 450,
    batch_size: int = 64,
    parallelism: int = 4,
) -> EmbeddingSet:
    """
    Embed every record's fused column text, averaging chunk vectors for long texts.

    Args:
        table: records to embed
        predicate_columns: columns concatenated into the record text
        provider: embedding endpoint
        max_chunk_tokens: whitespace-token budget per chunk
        batch_size: texts per provider request
        parallelism: concurrent provider requests

    Returns:
        EmbeddingSet keyed by record id
    """
    if max_chunk_tokens < 1:
        raise ValueError(f"max_chunk_tokens must be positive, got {max_chunk_tokens}")

    owners: List[int] = []
    texts: List[str] = []
    for record in table:
        for chunk in chunk_text(fused_text(record, predicate_columns), max_chunk_tokens):
            owners.append(record.id)
            texts.append(chunk)

    if not texts:
        raise EmbeddingDimensionError("cannot infer an embedding dimension from an empty table")

    batches = [(start, texts[start:start + batch_size]) for start in range(0, len(texts), batch_size)]
    chunk_vectors: List[Optional[np.ndarray]] = [None] * len(texts)
    dims = set()
    lock = threading.Lock()
    done = 0
    start_time = time.time()

    def run(batch):
        nonlocal done
        offset, batch_texts = batch
        vectors = provider.embed(batch_texts)
        with lock:
            for i, vector in enumerate(vectors):
                dims.add(vector.shape[-1])
                if len(dims) > 1:
                    raise EmbeddingDimensionError(f"provider returned mixed dimensions {sorted(dims)}")
                chunk_vectors[offset + i] = vector
            done += 1
            log_progress(logger, done, len(batches), start_time, "Embedding batches")

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        # list() re-raises the first worker exception
        list(pool.map(run, batches))

    dim = dims.pop()
    grouped: Dict[int, List[np.ndarray]] = {}
    for owner, vector in zip(owners, chunk_vectors):
        grouped.setdefault(owner, []).append(vector)

    result = EmbeddingSet(dim=dim)
    for record_id, vectors in grouped.items():
        result.add(record_id, np.mean(np.stack(vectors), axis=0))
    logger.info("✅ Embedded %d records (%d chunks, dim %d)", len(result), len(texts), dim)
    return result


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("vec", "<f4", (dim,))])


def write_embeddings(embeddings: EmbeddingSet, path: str) -> None:
    ensure_directory_exists(path)

    ids = embeddings.ids()
    if path.endswith(".jsonl"):
        with open(path, "w", encoding="utf-8") as f:
            for record_id in ids:
                vec = [float(x) for x in embeddings.vectors[record_id]]
                f.write(json.dumps({"id": record_id, "vec": vec}) + "\n")
        return

    records = np.zeros(len(ids), dtype=_record_dtype(embeddings.dim))
    if ids:
        records["id"] = ids
        records["vec"] = np.stack([embeddings.vectors[rid] for rid in ids])
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, embeddings.dim, len(ids)))
        f.write(records.tobytes())


def _read_jsonl_embeddings(path: str) -> EmbeddingSet:
    result: Optional[EmbeddingSet] = None
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                record_id, vec = int(row["id"]), row["vec"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise EmbeddingFormatError(f"{path} line {line_number}: {e}") from e
            if result is None:
                result = EmbeddingSet(dim=len(vec))
            result.add(record_id, vec)
    if result is None:
        raise EmbeddingFormatError(f"{path} holds no embeddings")
    return result


def read_embeddings(path: str) -> EmbeddingSet:
    if path.endswith(".jsonl"):
        return _read_jsonl_embeddings(path)

    with open(path, "rb") as f:
        payload = f.read()
    if len(payload) < HEADER.size:
        raise TruncatedFileError(f"{path} is shorter than the {HEADER.size}-byte header")

    magic, version, dim, count = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise BadMagicError(f"{path} has magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path} has version {version}, expected {FORMAT_VERSION}")
    if dim < 1:
        raise EmbeddingFormatError(f"{path} declares dim {dim}")

    dtype = _record_dtype(dim)
    body = memoryview(payload)[HEADER.size:]
    if count * dtype.itemsize > len(body):
        raise TruncatedFileError(
            f"{path} declares {count} records but holds only {len(body) // dtype.itemsize}"
        )
    records = np.frombuffer(body, dtype=dtype, count=count)
    ids = records["id"].tolist()
    if len(set(ids)) != len(ids):
        raise EmbeddingFormatError(f"{path} contains duplicate record ids")
    return EmbeddingSet(dim=dim, vectors={rid: records["vec"][i].copy() for i, rid in enumerate(ids)})
