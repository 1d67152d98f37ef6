import hashlib
import json
import os
from typing import Any, Dict

# Artifact naming conventions, derived from the primary output path
ARTIFACT_SUFFIXES = {
    "stats": ".stats.json",
    "manifest": ".manifest.json",
    "partial": ".partial.jsonl",
}
ARTIFACT_KINDS = list(ARTIFACT_SUFFIXES)
HASH_CHUNK_BYTES = 1 << 20


def get_artifact_path(output_path: str, kind: str) -> str:
    """
    Generate the path of a sibling artifact for a primary output file.

    Args:
        output_path: The primary output, e.g. 'runs/result.jsonl'
        kind: one of ARTIFACT_KINDS

    Returns:
        e.g. 'runs/result.manifest.json'
    """
    if kind not in ARTIFACT_SUFFIXES:
        raise ValueError(f"kind must be one of {ARTIFACT_KINDS}")
    stem, _ = os.path.splitext(output_path)
    return stem + ARTIFACT_SUFFIXES[kind]


def should_process_file(file_path: str, force: bool = False) -> bool:
    """
    Check if an output should be (re)generated based on existence and force flag.

    Args:
        file_path: Path to the output file
        force: Whether to force processing

    Returns:
        True if the file should be processed, False otherwise
    """
    if force:
        return True

    if not os.path.exists(file_path):
        return True

    # Empty leftovers from an interrupted run are redone
    if os.path.getsize(file_path) == 0:
        return True

    return False


def ensure_directory_exists(file_path: str) -> None:
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def content_hash(file_path: str) -> str:
    """Git blob hash of a file: sha1 over 'blob <size>\\0' followed by the bytes."""
    digest = hashlib.sha1(f"blob {os.path.getsize(file_path)}\0".encode("ascii"))
    with open(file_path, "rb") as f:
        for chunk in iter(lambda: f.read(HASH_CHUNK_BYTES), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(file_path: str, data: Dict[str, Any]) -> None:
    """Stable JSON (sorted keys, two-space indent, trailing newline)."""
    ensure_directory_exists(file_path)
    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(file_path: str) -> Dict[str, Any]:
    with open(file_path, "r", encoding="utf-8") as f:
        return json.load(f)
