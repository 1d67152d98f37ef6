"""
Table ingestion, predicate templates and prompt rendering for oracle calls.

A Table is the population being filtered; a Predicate is a natural-language
template whose {column} placeholders are filled from one Record per prompt.
"""

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from string import Formatter
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import pandas as pd

from errors import DuplicateIdError, PromptRenderError, TableFormatError
from file_utils import ensure_directory_exists

logger = logging.getLogger(__name__)

ANSWER_SUFFIX = "Answer with exactly one word: True or False."
TABLE_FORMATS = ["jsonl", "csv"]
MAX_RECORD_ID = 2**64 - 1
TRUE_STRINGS = {"true", "1", "yes", "t", "y"}
FALSE_STRINGS = {"false", "0", "no", "f", "n"}
CSV_ERROR_LINE = re.compile(r"\bline (\d+)")


@dataclass(frozen=True)
class Record:
    id: int
    columns: Mapping[str, str]


@dataclass(frozen=True)
class Table:
    records: Tuple[Record, ...]
    column_schema: Tuple[str, ...]
    _index: Dict[int, Record] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for record in self.records:
            if record.id in index:
                raise DuplicateIdError(record.id, line=len(index) + 1)
            index[record.id] = record
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def ids(self) -> List[int]:
        return [record.id for record in self.records]

    def get(self, record_id: int) -> Record:
        return self._index[record_id]

    def select(self, ids) -> List[Record]:
        return [self._index[rid] for rid in ids]

    def truth_labels(self, column: str) -> Dict[int, bool]:
        """Parse a ground-truth boolean column into {record id: label}."""
        if column not in self.column_schema:
            raise TableFormatError(f"truth column '{column}' not in schema {list(self.column_schema)}")
        return {record.id: parse_bool(record.columns.get(column, ""), column) for record in self.records}

    def to_frame(self) -> pd.DataFrame:
        rows = [{"id": record.id, **record.columns} for record in self.records]
        return pd.DataFrame(rows, columns=["id", *self.column_schema])


def parse_bool(value: str, column: str = "value") -> bool:
    text = str(value).strip().lower()
    if text in TRUE_STRINGS:
        return True
    if text in FALSE_STRINGS:
        return False
    raise TableFormatError(f"{column} is not a boolean: {value!r}")


@dataclass(frozen=True)
class Predicate:
    template: str
    instruction: Optional[str] = None

    @property
    def referenced_columns(self) -> List[str]:
        columns = []
        try:
            for _, name, _, _ in Formatter().parse(self.template):
                if name is not None and name not in columns:
                    columns.append(name)
        except ValueError as e:
            raise PromptRenderError(f"malformed template {self.template!r}: {e}") from e
        if "" in columns:
            raise PromptRenderError(f"template {self.template!r} has an unnamed placeholder")
        return columns

    def canonical_text(self) -> str:
        """Text identifying the predicate for cache keys."""
        return f"{self.instruction or ''}\n{self.template}"

    def validate(self, column_schema) -> None:
        missing = [c for c in self.referenced_columns if c not in column_schema]
        if missing:
            raise PromptRenderError(f"placeholders {missing} are not columns of {list(column_schema)}")


def render_prompt(predicate: Predicate, record: Record) -> str:
    """Instruction (if any), the filled template, then the fixed answer-format suffix."""
    values = {}
    for column in predicate.referenced_columns:
        value = record.columns.get(column)
        if value is None:
            raise PromptRenderError(f"record {record.id} has no value for placeholder {{{column}}}")
        values[column] = value
    body = predicate.template.format_map(values)

    parts = [predicate.instruction] if predicate.instruction else []
    parts += [body, ANSWER_SUFFIX]
    return "\n".join(parts)


def string_key_to_id(key: str) -> int:
    """Explicit adapter from external string keys to u64 record ids."""
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def infer_format(path: str, table_format: Optional[str] = None) -> str:
    if table_format:
        if table_format not in TABLE_FORMATS:
            raise TableFormatError(f"format must be one of {TABLE_FORMATS}")
        return table_format
    suffix = os.path.splitext(path)[1].lower()
    if suffix in (".jsonl", ".json", ".ndjson"):
        return "jsonl"
    if suffix == ".csv":
        return "csv"
    raise TableFormatError(f"cannot infer table format from {path}; pass one of {TABLE_FORMATS}")


def _coerce_id(value, line: int, hash_ids: bool) -> int:
    if hash_ids:
        return string_key_to_id(str(value))
    try:
        record_id = int(str(value).strip())
    except ValueError:
        raise TableFormatError(f"id {value!r} is not an unsigned integer", line=line) from None
    if record_id < 0 or record_id > MAX_RECORD_ID:
        raise TableFormatError(f"id {record_id} is outside the u64 range", line=line)
    return record_id


def _build_table(rows, id_column: Optional[str], hash_ids: bool) -> Table:
    """rows: iterable of (line number, dict of raw values)"""
    records = []
    schema: List[str] = []
    seen: Dict[int, int] = {}

    for row_index, (line, raw) in enumerate(rows):
        if id_column is not None:
            if id_column not in raw:
                raise TableFormatError(f"missing id column '{id_column}'", line=line)
            record_id = _coerce_id(raw[id_column], line, hash_ids)
        else:
            record_id = row_index

        if record_id in seen:
            raise DuplicateIdError(record_id, line=line)
        seen[record_id] = line

        columns = {}
        for name, value in raw.items():
            if name == id_column or value is None:
                continue
            columns[name] = value if isinstance(value, str) else str(value)
            if name not in schema:
                schema.append(name)
        records.append(Record(id=record_id, columns=columns))

    return Table(records=tuple(records), column_schema=tuple(schema))


def _iter_jsonl(path: str):
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise TableFormatError(f"malformed JSON ({e.msg})", line=line_number) from e
            if not isinstance(row, dict):
                raise TableFormatError("row is not a JSON object", line=line_number)
            yield line_number, row


def _iter_csv(path: str):
    try:
        df = pd.read_csv(
            path, dtype=str, keep_default_na=False, na_filter=False,
            skip_blank_lines=False, encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return
    except pd.errors.ParserError as e:
        match = CSV_ERROR_LINE.search(str(e))
        raise TableFormatError(f"malformed CSV: {e}", line=int(match.group(1)) if match else None) from e
    # quoted fields may span several physical lines
    line_number = 2 + sum(str(name).count("\n") for name in df.columns)
    for row in df.to_dict(orient="records"):
        start = line_number
        line_number += 1 + sum(v.count("\n") for v in row.values() if isinstance(v, str))
        if all(not isinstance(v, str) or v == "" for v in row.values()):
            continue
        yield start, row


def load_table(
    path: str,
    table_format: Optional[str] = None,
    id_column: Optional[str] = None,
    hash_ids: bool = False,
) -> Table:
    """
    Load a JSONL or RFC-4180 CSV file into a Table.

    Args:
        path: input file
        table_format: 'jsonl' or 'csv'; inferred from the suffix when omitted
        id_column: column holding u64 record ids; rows are numbered from 0 when omitted
        hash_ids: hash string keys in id_column to u64 ids

    Returns:
        The loaded Table, records in file order
    """
    if not os.path.exists(path):
        raise TableFormatError(f"table file not found: {path}")
    table_format = infer_format(path, table_format)
    rows = _iter_jsonl(path) if table_format == "jsonl" else _iter_csv(path)
    table = _build_table(rows, id_column, hash_ids)
    logger.info("✅ Loaded %d records (%d columns) from %s", len(table), len(table.column_schema), path)
    return table


def write_table(table: Table, path: str, table_format: Optional[str] = None) -> None:
    table_format = infer_format(path, table_format)
    ensure_directory_exists(path)

    if table_format == "jsonl":
        with open(path, "w", encoding="utf-8") as f:
            for record in table.records:
                f.write(json.dumps({"id": record.id, **record.columns}, ensure_ascii=False) + "\n")
    else:
        table.to_frame().to_csv(path, index=False, encoding="utf-8")
