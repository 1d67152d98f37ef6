import json

import numpy as np
import pytest

from data_model import Predicate, Record, Table
from embedding_store import EmbeddingSet
from evalsim import SyntheticSpec, gen_synthetic
from oracle import OracleOutcome, OutcomeSource


def make_outcomes(labels, start=0):
    """Oracle outcomes for ids start, start+1, ... with the given labels."""
    return [OracleOutcome(start + i, bool(label), 0, 0, OutcomeSource.MOCK) for i, label in enumerate(labels)]


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")


@pytest.fixture
def reviews_table():
    rows = [
        ("great phone with a long battery life", "true"),
        ("battery died after a week, terrible", "false"),
        ("screen is sharp and the battery lasts", "true"),
        ("arrived broken, refund requested", "false"),
        ("camera is fine, battery is great", "true"),
        ("customer support never answered", "false"),
    ]
    records = tuple(Record(id=i, columns={"review": text, "label": label}) for i, (text, label) in enumerate(rows))
    return Table(records=records, column_schema=("review", "label"))


@pytest.fixture
def review_predicate():
    return Predicate(template="The review '{review}' praises the battery.")


@pytest.fixture
def random_embeddings():
    def build(ids, dim=8, seed=0):
        rng = np.random.default_rng(seed)
        return EmbeddingSet(dim=dim, vectors={rid: rng.standard_normal(dim) for rid in ids})

    return build


@pytest.fixture(scope="session")
def pure_four_clusters():
    """50,000 rows in four well-separated clusters, two all-true and two all-false."""
    spec = SyntheticSpec.separated([12_500] * 4, [1.0, 0.0, 1.0, 0.0], dim=8, separation=50.0, seed=7)
    return gen_synthetic(spec)


@pytest.fixture(scope="session")
def coin_flip_cluster():
    """One blob of 1,000 rows with labels drawn at p = 0.5."""
    spec = SyntheticSpec.separated([1_000], [0.5], dim=8, seed=11)
    return gen_synthetic(spec)
