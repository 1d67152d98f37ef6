import numpy as np
import pytest

from clustering import (
    BM25Index,
    DistanceContext,
    DistanceSpec,
    build_lexicon,
    cluster_label_distribution,
    hybrid_distance,
    kmeans,
    mix_distance,
    tokenize,
    write_partition,
)
from embedding_store import EmbeddingSet
from errors import DistanceError


def blobs(centers, per_cluster, seed=0, spread=0.5):
    rng = np.random.default_rng(seed)
    embeddings = EmbeddingSet(dim=len(centers[0]))
    rid = 0
    for center in centers:
        for _ in range(per_cluster):
            embeddings.add(rid, np.asarray(center) + spread * rng.standard_normal(len(center)))
            rid += 1
    return embeddings


def test_tokenize_lowercases_words():
    assert tokenize("Hello, World! it's 2024") == ["hello", "world", "it", "s", "2024"]


def test_bm25_symmetric_and_normalized(reviews_table):
    lex = build_lexicon(reviews_table, ["review"])
    assert lex.symmetric_score(0, 2) == pytest.approx(lex.symmetric_score(2, 0))
    assert lex.normalized_similarity(1, 1) == 1.0
    for a in reviews_table.ids():
        for b in reviews_table.ids():
            assert 0.0 <= lex.normalized_similarity(a, b) <= 1.0


def test_bm25_shared_terms_score_higher():
    lex = BM25Index({0: ["red", "apple"], 1: ["red", "apple", "pie"], 2: ["blue", "car"]})
    assert lex.normalized_similarity(0, 1) > lex.normalized_similarity(0, 2)
    assert lex.normalized_similarity(0, 2) == 0.0


def test_bm25_similarity_spans_unit_interval():
    lex = BM25Index({
        0: ["red", "apple", "pie"],
        1: ["red", "apple", "tart", "cream"],
        2: ["green", "apple"],
        3: ["blue", "car"],
    })

    S = lex.similarity_matrix(range(4), range(4))
    off_diagonal = S[~np.eye(4, dtype=bool)]

    assert off_diagonal.min() == 0.0
    assert off_diagonal.max() == pytest.approx(1.0)
    assert np.allclose(S, S.T)
    assert np.all(np.diag(S) == 1.0)


def test_bm25_range_follows_the_id_subset():
    lex = BM25Index({0: ["a", "b"], 1: ["a", "c"], 2: ["a", "b", "d"], 3: ["x"]})
    subset = lex.score_range([0, 1, 2])

    assert lex.normalized_similarity(0, 2, subset) == pytest.approx(1.0)
    assert lex.score_range([3]) == (0.0, 0.0)


def test_identical_token_multisets_are_fully_similar():
    lex = BM25Index({0: ["b", "a", "a"], 1: ["a", "b", "a"], 2: ["a", "a", "b", "b", "c"]})
    assert lex.normalized_similarity(0, 1) == 1.0


def test_mix_distance_arithmetic():
    assert mix_distance(0.5, 0.25, 0.4) == pytest.approx(0.65)
    assert mix_distance(0.5, 0.25, 1.0) == pytest.approx(0.5)


def test_normalized_l2_reaches_one_on_large_sets(random_embeddings):
    ids = list(range(5000))
    emb = random_embeddings(ids, dim=4, seed=8)
    ctx = DistanceContext(ids, emb, DistanceSpec(lam=1.0))

    largest = max(ctx.distance_matrix(range(s, s + 500), ids).max() for s in range(0, 5000, 500))

    assert largest == pytest.approx(1.0)


def test_lambda_one_is_normalized_euclidean(random_embeddings):
    emb = random_embeddings(range(10), dim=4, seed=3)
    ctx = DistanceContext(list(range(10)), emb, DistanceSpec(lam=1.0))
    D = ctx.distance_matrix(range(10), range(10))

    raw = np.linalg.norm(emb.matrix(range(10))[:, None, :] - emb.matrix(range(10))[None, :, :], axis=2)
    assert np.allclose(D, raw / raw.max())
    assert np.all(np.diag(D) == 0.0)
    assert np.allclose(D, D.T)


def test_hybrid_distance_properties(reviews_table, random_embeddings):
    emb = random_embeddings(reviews_table.ids(), dim=6)
    lex = build_lexicon(reviews_table, ["review"])
    spec = DistanceSpec(lam=0.5)
    ctx = DistanceContext(reviews_table.ids(), emb, spec, lex)

    for a in reviews_table.ids():
        assert hybrid_distance(a, a, emb, lex, spec, ctx) == 0.0
        for b in reviews_table.ids():
            d = hybrid_distance(a, b, emb, lex, spec, ctx)
            assert 0.0 <= d <= 1.0
            assert d == pytest.approx(hybrid_distance(b, a, emb, lex, spec, ctx))


def test_lambda_zero_is_lexical_only(reviews_table, random_embeddings):
    emb = random_embeddings(reviews_table.ids(), dim=6)
    lex = build_lexicon(reviews_table, ["review"])
    d = hybrid_distance(0, 2, emb, lex, DistanceSpec(lam=0.0))
    assert d == pytest.approx(1.0 - lex.normalized_similarity(0, 2))


def test_distance_errors(random_embeddings):
    emb = random_embeddings([0, 1])
    with pytest.raises(DistanceError):
        hybrid_distance(0, 5, emb, None, DistanceSpec())
    with pytest.raises(DistanceError):
        DistanceContext([0, 1], emb, DistanceSpec(lam=0.5), lex=None)
    with pytest.raises(DistanceError):
        DistanceSpec(lam=1.5).validate()


def test_kmeans_recovers_separated_blobs():
    centers = [[0, 0, 0], [30, 0, 0], [0, 30, 0], [0, 0, 30]]
    emb = blobs(centers, per_cluster=50)

    partition = kmeans(emb.ids(), emb, k=4, seed=1)

    assert len(partition.clusters) == 4
    for cluster in partition.clusters:
        blob_ids = {rid // 50 for rid in cluster.member_ids}
        assert len(blob_ids) == 1
        assert len(cluster) == 50


def test_kmeans_partition_invariants(random_embeddings):
    ids = list(range(0, 300, 3))
    emb = random_embeddings(ids, dim=5, seed=2)

    partition = kmeans(ids, emb, k=7, seed=9)

    covered = [rid for c in partition.clusters for rid in c.member_ids]
    assert sorted(covered) == ids
    assert len(partition.clusters) <= 7
    assert all(len(c) > 0 for c in partition.clusters)
    assert set(partition.assignment) == set(ids)
    assert all(b <= a + 1e-9 for a, b in zip(partition.objective, partition.objective[1:]))


def test_kmeans_is_deterministic(random_embeddings):
    ids = list(range(200))
    emb = random_embeddings(ids, dim=4, seed=5)
    first = kmeans(ids, emb, k=4, seed=42)
    second = kmeans(ids, emb, k=4, seed=42)
    assert first.assignment == second.assignment


def test_kmeans_more_clusters_than_points(random_embeddings):
    emb = random_embeddings([5, 6, 7])
    partition = kmeans([5, 6, 7], emb, k=10)
    assert sorted(len(c) for c in partition.clusters) == [1, 1, 1]


def test_kmeans_rejects_nonpositive_k(random_embeddings):
    emb = random_embeddings([0, 1])
    with pytest.raises(ValueError):
        kmeans([0, 1], emb, k=0)


def test_kmeans_hybrid_mode_uses_medoids(reviews_table, random_embeddings):
    emb = random_embeddings(reviews_table.ids(), dim=4)
    lex = build_lexicon(reviews_table, ["review"])

    partition = kmeans(reviews_table.ids(), emb, k=2, spec=DistanceSpec(lam=0.3), seed=0, lex=lex)

    assert sorted(partition.assignment) == reviews_table.ids()
    for cluster in partition.clusters:
        assert cluster.medoid_id in cluster.member_ids


def test_label_distribution_and_partition_file(tmp_path):
    emb = blobs([[0, 0], [40, 40]], per_cluster=10)
    partition = kmeans(emb.ids(), emb, k=2, seed=0)
    truth = {rid: rid < 10 for rid in emb.ids()}

    dist = cluster_label_distribution(partition, truth)
    assert sorted(dist["size"].tolist()) == [10, 10]
    assert dist["purity"].tolist() == [1.0, 1.0]

    path = tmp_path / "partition.jsonl"
    write_partition(partition, str(path))
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 20
    assert lines[0].startswith('{"id":0,"cluster":')


def test_kmeans_splits_two_point_masses():
    embeddings = EmbeddingSet(dim=2)
    for rid in range(100):
        embeddings.add(rid, np.array([0.0, 0.0]) if rid < 50 else np.array([10.0, 10.0]))

    partition = kmeans(embeddings.ids(), embeddings, k=2, seed=3)

    assert sorted(sorted(c.member_ids) for c in partition.clusters) == [list(range(50)), list(range(50, 100))]
